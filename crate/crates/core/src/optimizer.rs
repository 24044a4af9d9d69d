//! Discretized boundary-value minimization of the action and a verification
//! pass for candidate solutions.
//!
//! Inside the common variable window `[start_time, end_time]` each particle is
//! a cubic Hermite curve through nodes. Node positions and velocities are the
//! unknowns; an interior breaking node carries separate left and right
//! velocities. Outside the window each trajectory keeps its frame (the
//! initial trajectory joined with any history), so both light cones always
//! land on known pieces.
//!
//! The two particles are relaxed alternately: particle 1's action with
//! particle 2 frozen, then the reverse. Each block is a BFGS descent with a
//! backtracking line search. The result is a critical point of both block
//! actions, not a certified minimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{
    action_with_partner, el_residual_with_partner, lagrangian_at, pullback_points, ActionWindow, BoundaryData,
};
use crate::error::{Error, Result};
use crate::momentum::{break_residuals, BreakResidual};
use crate::quadrature::{integrate_pieces, QuadOptions};
use crate::trajectory::{HermiteKnot, PiecewiseTrajectory, Side};
use crate::vec3::Vec3;

pub const DEFAULT_GTOL: f64 = 1e-8;
/// Points of the Chebyshev-Lobatto grid used per segment by [`verify`].
pub const CHEBYSHEV_POINTS: usize = 9;
/// Allowed action increase of an accepted step, relative to `max(1, |S|)`.
pub const DESCENT_SLACK: f64 = 1e-12;

/// Nodes of one particle inside the variable window.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleNodes {
    pub times: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub v_left: Vec<Vec3>,
    pub v_right: Vec<Vec3>,
    /// Interior nodes where the velocity may jump. Elsewhere `v_left == v_right`.
    pub is_break: Vec<bool>,
}

impl ParticleNodes {
    fn knots(&self) -> Vec<HermiteKnot> {
        (0..self.times.len())
            .map(|j| HermiteKnot {
                t: self.times[j],
                x: self.positions[j],
                v_left: self.v_left[j],
                v_right: self.v_right[j],
            })
            .collect()
    }

    fn last(&self) -> usize {
        self.times.len() - 1
    }

    /// Mean length of the elements adjacent to node `j`.
    fn node_scale(&self, j: usize) -> f64 {
        let n = self.last();
        let left = if j > 0 { self.times[j] - self.times[j - 1] } else { 0.0 };
        let right = if j < n { self.times[j + 1] - self.times[j] } else { 0.0 };
        let count = (j > 0) as u8 + (j < n) as u8;
        (left + right) / f64::from(count)
    }

    fn break_nodes(&self) -> Vec<usize> {
        (0..self.times.len()).filter(|&j| self.is_break[j]).collect()
    }

    /// Variable layout: per node, the position (interior nodes only), then one
    /// velocity or, at a break, the left and right velocities.
    fn layout(&self) -> Layout {
        let mut next = 0;
        let mut take = || {
            let i = next;
            next += 3;
            i
        };
        let n = self.last();
        let mut pos = Vec::with_capacity(n + 1);
        let mut vl = Vec::with_capacity(n + 1);
        let mut vr = Vec::with_capacity(n + 1);
        for j in 0..=n {
            pos.push((j > 0 && j < n).then(&mut take));
            let l = take();
            vl.push(l);
            vr.push(if self.is_break[j] { take() } else { l });
        }
        Layout { pos, vl, vr, len: next }
    }
}

struct Layout {
    pos: Vec<Option<usize>>,
    vl: Vec<usize>,
    vr: Vec<usize>,
    len: usize,
}

/// Discrete unknowns of both particles together with the frames they are
/// spliced into.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    pub window: (f64, f64),
    pub frames: [PiecewiseTrajectory; 2],
    pub nodes: [ParticleNodes; 2],
}

impl DecisionVector {
    /// Number of free reals for particle `k` (0 or 1), break times excluded.
    pub fn block_len(&self, k: usize) -> usize {
        self.nodes[k].layout().len
    }

    /// Free positions and velocities of particle `k`, in layout order.
    pub fn encode(&self, k: usize) -> Vec<f64> {
        let nodes = &self.nodes[k];
        let lay = nodes.layout();
        let mut x = vec![0.0; lay.len];
        let put = |x: &mut Vec<f64>, i: usize, v: Vec3| x[i..i + 3].copy_from_slice(&[v.x, v.y, v.z]);
        for j in 0..nodes.times.len() {
            if let Some(i) = lay.pos[j] {
                put(&mut x, i, nodes.positions[j]);
            }
            put(&mut x, lay.vl[j], nodes.v_left[j]);
            put(&mut x, lay.vr[j], nodes.v_right[j]);
        }
        x
    }

    /// Copy with the free reals of particle `k` replaced by `x`.
    pub fn with_block(&self, k: usize, x: &[f64]) -> Result<Self> {
        let lay = self.nodes[k].layout();
        if x.len() != lay.len {
            return Err(Error::Domain(format!("block {k} expects {} reals, got {}", lay.len, x.len())));
        }
        let get = |i: usize| Vec3::new(x[i], x[i + 1], x[i + 2]);
        let mut out = self.clone();
        let nodes = &mut out.nodes[k];
        for j in 0..nodes.times.len() {
            if let Some(i) = lay.pos[j] {
                nodes.positions[j] = get(i);
            }
            nodes.v_left[j] = get(lay.vl[j]);
            nodes.v_right[j] = get(lay.vr[j]);
        }
        Ok(out)
    }

    /// Times of the breaking nodes of particle `k`.
    pub fn break_times(&self, k: usize) -> Vec<f64> {
        let nodes = &self.nodes[k];
        nodes.break_nodes().into_iter().map(|j| nodes.times[j]).collect()
    }

    /// Copy with the breaking nodes of particle `k` moved to `times`, which
    /// must stay strictly between their neighbouring nodes.
    pub fn with_break_times(&self, k: usize, times: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let nodes = &mut out.nodes[k];
        let idx = nodes.break_nodes();
        if idx.len() != times.len() {
            return Err(Error::Domain("break time count mismatch".into()));
        }
        for (&j, &t) in idx.iter().zip(times) {
            if !(t > nodes.times[j - 1] && t < nodes.times[j + 1]) {
                return Err(Error::Domain(format!("break time {t} leaves its element pair")));
            }
            nodes.times[j] = t;
        }
        Ok(out)
    }

    /// The Hermite curve of particle `k` over the window.
    pub fn window_trajectory(&self, k: usize) -> Result<PiecewiseTrajectory> {
        PiecewiseTrajectory::cubic_hermite(&self.nodes[k].knots(), self.frames[k].particle())
    }

    /// Full trajectory of particle `k`: the window curve spliced into its frame.
    pub fn trajectory(&self, k: usize) -> Result<PiecewiseTrajectory> {
        self.frames[k].spliced(&self.window_trajectory(k)?)
    }

    pub fn decode(&self) -> Result<(PiecewiseTrajectory, PiecewiseTrajectory)> {
        Ok((self.trajectory(0)?, self.trajectory(1)?))
    }

    fn action_window(&self) -> ActionWindow {
        ActionWindow {
            t_start: self.window.0,
            t_end: self.window.1,
        }
    }
}

/// Samples both trajectories (joined with the boundary histories) on the
/// window `[start_time, end_time]`. Each particle's window is cut at its
/// `break_times`; every resulting piece gets `nodes_per_segment` equally
/// spaced nodes, endpoints included.
pub fn discretize(
    boundary: &BoundaryData,
    trajs: (&PiecewiseTrajectory, &PiecewiseTrajectory),
    nodes_per_segment: usize,
    break_times: [&[f64]; 2],
) -> Result<DecisionVector> {
    if nodes_per_segment < 2 {
        return Err(Error::Config(format!(
            "need at least 2 nodes per segment, got {nodes_per_segment}"
        )));
    }
    let (a, b) = (boundary.start_time, boundary.end_time);
    if !(a < b) {
        return Err(Error::Domain(format!("empty variable window [{a}, {b}]")));
    }
    let frames = [boundary.partner_of_2(trajs.0)?, boundary.partner_of_1(trajs.1)?];
    let mut nodes = Vec::with_capacity(2);
    for k in 0..2 {
        let frame = &frames[k];
        let (lo, hi) = frame.domain();
        if a < lo || b > hi {
            return Err(Error::Domain(format!(
                "trajectory {} on [{lo}, {hi}] does not cover the window [{a}, {b}]",
                k + 1
            )));
        }
        let mut cuts: Vec<f64> = break_times[k].to_vec();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        if let Some(&t) = cuts.iter().find(|&&t| !(t > a && t < b)) {
            return Err(Error::Domain(format!("break time {t} is not inside the window [{a}, {b}]")));
        }
        let ends: Vec<f64> = std::iter::once(a).chain(cuts).chain(std::iter::once(b)).collect();
        let mut times = vec![a];
        let mut is_break = vec![false];
        for w in ends.windows(2) {
            let m = nodes_per_segment - 1;
            for i in 1..=m {
                times.push(if i == m { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / m as f64 });
                is_break.push(i == m && w[1] < b);
            }
        }
        let n = times.len() - 1;
        let mut positions = Vec::with_capacity(n + 1);
        let mut v_left = Vec::with_capacity(n + 1);
        let mut v_right = Vec::with_capacity(n + 1);
        for (j, &t) in times.iter().enumerate() {
            positions.push(frame.position(t)?);
            let (_, vl, _) = frame.evaluate_state(t, if j == 0 { Side::Right } else { Side::Left })?;
            let (_, vr, _) = frame.evaluate_state(t, if j == n { Side::Left } else { Side::Right })?;
            if is_break[j] {
                v_left.push(vl);
                v_right.push(vr);
            } else {
                let v = if j == 0 {
                    vr
                } else if j == n {
                    vl
                } else {
                    (vl + vr) * 0.5
                };
                v_left.push(v);
                v_right.push(v);
            }
        }
        nodes.push(ParticleNodes {
            times,
            positions,
            v_left,
            v_right,
            is_break,
        });
    }
    let [n1, n2]: [ParticleNodes; 2] = nodes.try_into().expect("two particles");
    Ok(DecisionVector {
        window: (a, b),
        frames,
        nodes: [n1, n2],
    })
}

/// Option block of scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub gtol: f64,
    /// Cap on accepted steps over both blocks.
    pub max_iter: usize,
    pub free_break_times: bool,
    pub nodes_per_segment: usize,
    /// Tolerance on the Euler-Lagrange residual for a converged report.
    pub el_tol: f64,
    /// Tolerance on momentum and energy current jumps for a converged report.
    pub break_tol: f64,
    /// Cap on alternations between the two blocks.
    pub max_sweeps: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            gtol: DEFAULT_GTOL,
            max_iter: 2000,
            free_break_times: false,
            nodes_per_segment: 5,
            el_tol: 1e-6,
            break_tol: 1e-6,
            max_sweeps: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentResidual {
    /// 1 or 2.
    pub particle: u8,
    pub t0: f64,
    pub t1: f64,
    pub max_el_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleBreak {
    pub particle: u8,
    #[serde(flatten)]
    pub residual: BreakResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimizerReport {
    /// Sum of both block actions plus `k2`.
    pub action: f64,
    pub block_actions: [f64; 2],
    pub segments: Vec<SegmentResidual>,
    pub max_el_residual: f64,
    pub break_residuals: Vec<ParticleBreak>,
    pub max_break_residual: f64,
    pub iterations: usize,
    /// ∞-norm of the discrete gradient over both blocks (NaN from [`verify`]).
    pub gradient_norm: f64,
    /// Block actions after every accepted step, per particle.
    pub descent: [Vec<f64>; 2],
    pub converged: bool,
}

fn quad() -> QuadOptions {
    QuadOptions {
        rel_tol: 1e-14,
        abs_tol: 1e-16,
        max_depth: 40,
    }
}

/// Hermite basis values and time derivatives at `s ∈ [0, 1]` on an element
/// of length `h`, ordered `x_j, v_j, x_{j+1}, v_{j+1}`.
fn hermite_basis(s: f64, h: f64) -> [(f64, f64); 4] {
    let (s2, s3) = (s * s, s * s * s);
    [
        (2.0 * s3 - 3.0 * s2 + 1.0, (6.0 * s2 - 6.0 * s) / h),
        ((s3 - 2.0 * s2 + s) * h, 3.0 * s2 - 4.0 * s + 1.0),
        (-2.0 * s3 + 3.0 * s2, (-6.0 * s2 + 6.0 * s) / h),
        ((s3 - s2) * h, 3.0 * s2 - 2.0 * s),
    ]
}

/// Block action of particle `k` with the other particle frozen.
pub fn block_action(dv: &DecisionVector, k: usize) -> Result<f64> {
    let me = dv.trajectory(k)?;
    let partner = dv.trajectory(1 - k)?;
    action_with_partner(&me, &partner, dv.action_window(), 0.0)
}

/// Gradient of the block action of particle `k` with respect to its free
/// positions and velocities, in [`DecisionVector::encode`] order. Each entry
/// is the directional derivative along the matching Hermite basis function,
/// including the shift of pullback times of partner breaking points.
pub fn block_gradient(dv: &DecisionVector, k: usize) -> Result<Vec<f64>> {
    let me = dv.trajectory(k)?;
    let partner = dv.trajectory(1 - k)?;
    let nodes = &dv.nodes[k];
    let lay = nodes.layout();
    let (a, b) = dv.window;
    let pulls = pullback_points(&me, &partner, a, b);
    let elements: Vec<usize> = (0..nodes.last()).collect();
    let parts = elements
        .par_iter()
        .map(|&e| {
            let (t0, t1) = (nodes.times[e], nodes.times[e + 1]);
            let h = t1 - t0;
            let mut cuts = vec![t0];
            cuts.extend(pulls.iter().map(|p| p.t1).filter(|&t| t > t0 && t < t1));
            cuts.push(t1);
            let mut local = integrate_pieces(
                |t| {
                    let lp = lagrangian_at(&me, &partner, t, Side::Right)?;
                    let basis = hermite_basis((t - t0) / h, h);
                    let mut out = Vec::with_capacity(12);
                    for (phi, dphi) in basis {
                        out.extend([0, 1, 2].map(|c| lp.dl_dx[c] * phi + lp.dl_dv[c] * dphi));
                    }
                    Ok(out)
                },
                &cuts,
                12,
                quad(),
            )?;
            for p in pulls.iter().filter(|p| p.t1 > t0 && p.t1 < t1) {
                let left = lagrangian_at(&me, &partner, p.t1, Side::Left)?;
                let right = lagrangian_at(&me, &partner, p.t1, Side::Right)?;
                let (x1, v1, _) = me.evaluate_state(p.t1, Side::Right)?;
                let n = (x1 - partner.position(p.l)?).normalized();
                let s = p.branch.sign();
                let g = n * (-(left.value - right.value) * s / (1.0 + s * n.dot(v1)));
                for (i, (phi, _)) in hermite_basis((p.t1 - t0) / h, h).into_iter().enumerate() {
                    for c in 0..3 {
                        local[3 * i + c] += g[c] * phi;
                    }
                }
            }
            Ok((e, local))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; lay.len];
    for (e, local) in parts {
        let targets = [lay.pos[e], Some(lay.vr[e]), lay.pos[e + 1], Some(lay.vl[e + 1])];
        for (i, target) in targets.into_iter().enumerate() {
            if let Some(base) = target {
                for c in 0..3 {
                    grad[base + c] += local[3 * i + c];
                }
            }
        }
    }
    Ok(grad)
}

/// Central finite-difference derivatives of the block action with respect to
/// the breaking-node times of particle `k`.
fn break_time_gradient(dv: &DecisionVector, k: usize) -> Result<Vec<f64>> {
    let times = dv.break_times(k);
    let nodes = &dv.nodes[k];
    let idx = nodes.break_nodes();
    let mut out = Vec::with_capacity(times.len());
    for (i, &j) in idx.iter().enumerate() {
        let h = 1e-5 * (nodes.times[j + 1] - nodes.times[j - 1]);
        let mut shifted = times.clone();
        shifted[i] = times[i] + h;
        let up = block_action(&dv.with_break_times(k, &shifted)?, k)?;
        shifted[i] = times[i] - h;
        let down = block_action(&dv.with_break_times(k, &shifted)?, k)?;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A block point in scaled coordinates: velocities are multiplied by the
/// adjacent element length so every coordinate is a length.
struct BlockState {
    dv: DecisionVector,
    f: f64,
    /// Gradient in scaled coordinates.
    g: Vec<f64>,
    /// Gradient ∞-norm in raw coordinates.
    g_raw: f64,
}

struct Block {
    k: usize,
    free_breaks: bool,
    scale: Vec<f64>,
}

impl Block {
    fn new(dv: &DecisionVector, k: usize, free_breaks: bool) -> Self {
        let nodes = &dv.nodes[k];
        let lay = nodes.layout();
        let mut scale = vec![1.0; lay.len];
        for j in 0..nodes.times.len() {
            let h = nodes.node_scale(j);
            for base in [lay.vl[j], lay.vr[j]] {
                scale[base..base + 3].fill(h);
            }
        }
        if free_breaks {
            scale.extend(std::iter::repeat_n(1.0, nodes.break_nodes().len()));
        }
        Self { k, free_breaks, scale }
    }

    fn coords(&self, dv: &DecisionVector) -> Vec<f64> {
        let mut x = dv.encode(self.k);
        if self.free_breaks {
            x.extend(dv.break_times(self.k));
        }
        x.iter().zip(&self.scale).map(|(x, s)| x * s).collect()
    }

    fn point(&self, base: &DecisionVector, y: &[f64]) -> Result<DecisionVector> {
        let x: Vec<f64> = y.iter().zip(&self.scale).map(|(y, s)| y / s).collect();
        let n = base.block_len(self.k);
        let mut dv = base.with_block(self.k, &x[..n])?;
        if self.free_breaks {
            dv = dv.with_break_times(self.k, &x[n..])?;
        }
        Ok(dv)
    }

    fn evaluate(&self, dv: DecisionVector) -> Result<BlockState> {
        let f = block_action(&dv, self.k)?;
        let mut raw = block_gradient(&dv, self.k)?;
        if self.free_breaks {
            raw.extend(break_time_gradient(&dv, self.k)?);
        }
        let g = raw.iter().zip(&self.scale).map(|(g, s)| g / s).collect();
        Ok(BlockState {
            dv,
            f,
            g,
            g_raw: inf_norm(&raw),
        })
    }
}

/// Errors that make a trial point unusable rather than the whole run.
fn is_rejectable(e: &Error) -> bool {
    matches!(
        e,
        Error::Superluminal { .. } | Error::Collision { .. } | Error::Domain(_) | Error::Convergence { .. }
    )
}

enum BlockEnd {
    Converged,
    Budget,
    LineSearchFailed,
}

/// BFGS descent on one block. Accepted block actions are appended to `history`.
fn descend_block(
    state: BlockState,
    block: &Block,
    opts: &MinimizeOptions,
    budget: &mut usize,
    history: &mut Vec<f64>,
) -> Result<(BlockState, BlockEnd)> {
    let mut cur = state;
    let n = cur.g.len();
    let mut hinv: Vec<f64> = identity(n);
    let mut fresh = true;
    let h_min = block_min_element(&cur.dv, block.k);
    let mut radius = 0.05 * h_min;
    loop {
        if cur.g_raw < opts.gtol {
            return Ok((cur, BlockEnd::Converged));
        }
        if *budget == 0 {
            return Ok((cur, BlockEnd::Budget));
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i * n..(i + 1) * n], &cur.g)).collect();
        let mut slope = dot(&d, &cur.g);
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            d = cur.g.iter().map(|g| -g).collect();
            slope = dot(&d, &cur.g);
        }
        let mut alpha = 1.0;
        let step_len = inf_norm(&d);
        if fresh && step_len > radius {
            alpha = radius / step_len;
        }
        let x0 = block.coords(&cur.dv);
        let slack = DESCENT_SLACK * cur.f.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..50 {
            let y: Vec<f64> = x0.iter().zip(&d).map(|(x, d)| x + alpha * d).collect();
            let trial = block.point(&cur.dv, &y).and_then(|dv| block.evaluate(dv));
            match trial {
                Ok(t) => {
                    let armijo = t.f <= cur.f + 1e-4 * alpha * slope;
                    // Near the optimum the decrease drops below quadrature
                    // rounding; accept a flat step if the slope along d shrinks.
                    let flat = t.f <= cur.f + slack && dot(&t.g, &d).abs() <= 0.9 * slope.abs();
                    if armijo || flat {
                        accepted = Some((t, alpha));
                        break;
                    }
                }
                Err(e) if is_rejectable(&e) => radius *= 0.5,
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        let Some((next, alpha)) = accepted else {
            if !fresh {
                hinv = identity(n);
                fresh = true;
                continue;
            }
            return Ok((cur, BlockEnd::LineSearchFailed));
        };
        let s: Vec<f64> = d.iter().map(|d| alpha * d).collect();
        let yv: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if fresh {
                let gamma = sy / dot(&yv, &yv);
                hinv.iter_mut().for_each(|h| *h *= gamma);
            }
            bfgs_update(&mut hinv, &s, &yv, sy);
            fresh = false;
        }
        radius = (2.0 * radius).min(h_min);
        *budget -= 1;
        history.push(next.f);
        cur = next;
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Inverse-Hessian BFGS update `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn block_min_element(dv: &DecisionVector, k: usize) -> f64 {
    dv.nodes[k]
        .times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

fn check_pinned(dv: &DecisionVector) -> Result<()> {
    for k in 0..2 {
        let nodes = &dv.nodes[k];
        for j in [0, nodes.last()] {
            let pinned = dv.frames[k].position(nodes.times[j])?;
            if nodes.positions[j] != pinned {
                return Err(Error::Domain(format!(
                    "endpoint of particle {} at t = {} is not pinned to the boundary data",
                    k + 1,
                    nodes.times[j]
                )));
            }
        }
    }
    Ok(())
}

/// Alternating BFGS descent from `init`. Fails up front if `init` is not
/// feasible; later infeasible trial points only shrink the step.
pub fn minimize(
    boundary: &BoundaryData,
    init: DecisionVector,
    opts: &MinimizeOptions,
) -> Result<(PiecewiseTrajectory, PiecewiseTrajectory, MinimizerReport)> {
    if !(opts.gtol > 0.0) {
        return Err(Error::Config(format!("gtol must be positive, got {}", opts.gtol)));
    }
    check_pinned(&init)?;
    init.decode()?;
    let mut dv = init;
    let mut budget = opts.max_iter;
    let mut descent: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut grad = [f64::INFINITY; 2];
    let mut failed = false;
    for _ in 0..opts.max_sweeps.max(1) {
        let mut moved = false;
        for k in 0..2 {
            let block = Block::new(&dv, k, opts.free_break_times);
            let start = block.evaluate(dv.clone())?;
            let before = descent[k].len();
            let (end, how) = descend_block(start, &block, opts, &mut budget, &mut descent[k])?;
            moved |= descent[k].len() > before;
            grad[k] = end.g_raw;
            dv = end.dv;
            failed |= matches!(how, BlockEnd::LineSearchFailed);
        }
        // The other block may have moved after this one converged.
        if !moved || budget == 0 || failed {
            break;
        }
    }
    // Fresh gradients of the final point for the report.
    for (k, g) in grad.iter_mut().enumerate() {
        let block = Block::new(&dv, k, opts.free_break_times);
        *g = block.evaluate(dv.clone())?.g_raw;
    }
    let (traj1, traj2) = dv.decode()?;
    let mut report = verify_window(&traj1, &traj2, dv.window, boundary.k2, opts)?;
    report.iterations = descent[0].len() + descent[1].len();
    report.gradient_norm = grad[0].max(grad[1]);
    report.descent = descent;
    report.converged &= report.gradient_norm < opts.gtol;
    Ok((traj1, traj2, report))
}

/// Residual diagnostics of a candidate solution over the window
/// `[start_time, end_time]`: Euler-Lagrange residuals on a Chebyshev grid of
/// every smooth segment of each particle, and current jumps at every interior
/// junction. Trajectories are joined with the boundary histories first.
pub fn verify(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    boundary: &BoundaryData,
) -> Result<MinimizerReport> {
    let opts = MinimizeOptions::default();
    verify_with(traj1, traj2, boundary, opts.el_tol, opts.break_tol)
}

/// As [`verify`] with explicit tolerances for the converged flag.
pub fn verify_with(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    boundary: &BoundaryData,
    el_tol: f64,
    break_tol: f64,
) -> Result<MinimizerReport> {
    let full1 = boundary.partner_of_2(traj1)?;
    let full2 = boundary.partner_of_1(traj2)?;
    let opts = MinimizeOptions {
        el_tol,
        break_tol,
        ..MinimizeOptions::default()
    };
    let mut report = verify_window(
        &full1,
        &full2,
        (boundary.start_time, boundary.end_time),
        boundary.k2,
        &opts,
    )?;
    report.gradient_norm = f64::NAN;
    Ok(report)
}

fn verify_window(
    full1: &PiecewiseTrajectory,
    full2: &PiecewiseTrajectory,
    (a, b): (f64, f64),
    k2: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizerReport> {
    let window = ActionWindow::new(a, b)?;
    let pair = [full1, full2];
    let mut segments = Vec::new();
    let mut breaks = Vec::new();
    let mut block_actions = [0.0; 2];
    for k in 0..2 {
        let (me, partner) = (pair[k], pair[1 - k]);
        block_actions[k] = action_with_partner(me, partner, window, 0.0)?;
        let pieces: Vec<(f64, f64)> = me
            .segments()
            .iter()
            .filter(|s| s.t1 > a && s.t0 < b)
            .map(|s| (s.t0.max(a), s.t1.min(b)))
            .collect();
        let maxima = pieces
            .par_iter()
            .map(|&(t0, t1)| {
                let mut worst = 0.0f64;
                let m = CHEBYSHEV_POINTS - 1;
                for i in 0..=m {
                    let t = 0.5 * (t0 + t1) - 0.5 * (t1 - t0) * (std::f64::consts::PI * i as f64 / m as f64).cos();
                    let (t, side) = match i {
                        0 => (t0, Side::Right),
                        _ if i == m => (t1, Side::Left),
                        _ => (t, Side::Right),
                    };
                    worst = worst.max(el_residual_with_partner(me, partner, t, side)?.norm());
                }
                Ok(worst)
            })
            .collect::<Result<Vec<_>>>()?;
        for (&(t0, t1), worst) in pieces.iter().zip(maxima) {
            segments.push(SegmentResidual {
                particle: k as u8 + 1,
                t0,
                t1,
                max_el_residual: worst,
            });
        }
        for r in break_residuals(me, partner)? {
            if r.t > a && r.t < b {
                breaks.push(ParticleBreak {
                    particle: k as u8 + 1,
                    residual: r,
                });
            }
        }
    }
    let max_el_residual = segments.iter().map(|s| s.max_el_residual).fold(0.0, f64::max);
    let max_break_residual = breaks.iter().map(|b| b.residual.magnitude()).fold(0.0, f64::max);
    Ok(MinimizerReport {
        action: k2 + block_actions[0] + block_actions[1],
        block_actions,
        segments,
        max_el_residual,
        break_residuals: breaks,
        max_break_residual,
        iterations: 0,
        gradient_norm: 0.0,
        descent: [Vec::new(), Vec::new()],
        converged: max_el_residual < opts.el_tol && max_break_residual < opts.break_tol,
    })
}

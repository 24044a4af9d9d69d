//! Piecewise-polynomial trajectories with breaking points.
//!
//! A trajectory is a continuous path built from polynomial segments that abut
//! in time. Velocity and acceleration may jump at the junctions (breaking
//! points), so every derivative query carries a [`Side`] that selects the
//! one-sided limit. Polynomials are stored in the local variable `s = t - t0`
//! of their segment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// One-sided limit selector at a breaking point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Side {
    Left,
    #[default]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    pub mass: f64,
    pub charge: f64,
}

impl ParticleParams {
    pub fn new(mass: f64, charge: f64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() || !charge.is_finite() {
            return Err(Error::Domain(format!(
                "particle mass must be positive and finite (mass = {mass}, charge = {charge})"
            )));
        }
        Ok(Self { mass, charge })
    }
}

/// Scalar polynomial in the local variable `s`, lowest order first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    /// Value and first two derivatives at `s` (Horner).
    pub fn eval3(&self, s: f64) -> (f64, f64, f64) {
        let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
        for &c in self.0.iter().rev() {
            ddp = ddp * s + 2.0 * dp;
            dp = dp * s + p;
            p = p * s + c;
        }
        (p, dp, ddp)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// Re-expand around `s = delta`: returns q with q(u) = p(u + delta).
    pub fn shifted(&self, delta: f64) -> Poly {
        let mut c = self.0.clone();
        let n = c.len();
        for i in 0..n {
            for j in (i..n.saturating_sub(1)).rev() {
                c[j] += delta * c[j + 1];
            }
        }
        Poly(c)
    }

    pub fn scaled_add(&self, other: &Poly, eps: f64) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|i| {
                    self.0.get(i).copied().unwrap_or(0.0)
                        + eps * other.0.get(i).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }
}

/// Polynomial piece on `[t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub coeffs: [Poly; 3],
}

impl Segment {
    pub fn new(t0: f64, t1: f64, coeffs: [Poly; 3]) -> Result<Self> {
        if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::Domain(format!("segment needs t0 < t1 (got [{t0}, {t1}])")));
        }
        Ok(Self { t0, t1, coeffs })
    }

    pub fn linear(t0: f64, t1: f64, x0: Vec3, v: Vec3) -> Result<Self> {
        Self::new(
            t0,
            t1,
            [0, 1, 2].map(|k| Poly(vec![x0[k], v[k]])),
        )
    }

    /// Cubic Hermite piece matching endpoint positions and velocities.
    pub fn cubic_hermite(t0: f64, t1: f64, x0: Vec3, v0: Vec3, x1: Vec3, v1: Vec3) -> Result<Self> {
        let h = t1 - t0;
        let c = [0, 1, 2].map(|k| {
            let c2 = (3.0 * (x1[k] - x0[k]) / h - 2.0 * v0[k] - v1[k]) / h;
            let c3 = (2.0 * (x0[k] - x1[k]) / h + v0[k] + v1[k]) / (h * h);
            Poly(vec![x0[k], v0[k], c2, c3])
        });
        Self::new(t0, t1, c)
    }

    /// Quintic Hermite piece matching endpoint positions, velocities and accelerations.
    #[allow(clippy::too_many_arguments)]
    pub fn quintic_hermite(
        t0: f64,
        t1: f64,
        x0: Vec3,
        v0: Vec3,
        a0: Vec3,
        x1: Vec3,
        v1: Vec3,
        a1: Vec3,
    ) -> Result<Self> {
        let h = t1 - t0;
        let c = [0, 1, 2].map(|k| {
            let dx = x1[k] - (x0[k] + v0[k] * h + 0.5 * a0[k] * h * h);
            let dv = v1[k] - (v0[k] + a0[k] * h);
            let da = a1[k] - a0[k];
            let c3 = (10.0 * dx - 4.0 * dv * h + 0.5 * da * h * h) / h.powi(3);
            let c4 = (-15.0 * dx + 7.0 * dv * h - da * h * h) / h.powi(4);
            let c5 = (6.0 * dx - 3.0 * dv * h + 0.5 * da * h * h) / h.powi(5);
            Poly(vec![x0[k], v0[k], 0.5 * a0[k], c3, c4, c5])
        });
        Self::new(t0, t1, c)
    }

    /// Position, velocity and acceleration at absolute time `t`.
    pub fn state(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let s = t - self.t0;
        let [(x, vx, ax), (y, vy, ay), (z, vz, az)] = [0, 1, 2].map(|k| self.coeffs[k].eval3(s));
        (Vec3::new(x, y, z), Vec3::new(vx, vy, vz), Vec3::new(ax, ay, az))
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let s = t - self.t0;
        Vec3::new(self.coeffs[0].eval(s), self.coeffs[1].eval(s), self.coeffs[2].eval(s))
    }

    /// The same polynomial restricted to `[a, b]`.
    pub fn restricted(&self, a: f64, b: f64) -> Result<Segment> {
        let d = a - self.t0;
        Segment::new(a, b, self.coeffs.clone().map(|p| p.shifted(d)))
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(Poly::degree).max().unwrap_or(0)
    }

    /// Piece with zero acceleration everywhere.
    pub fn is_linear(&self) -> bool {
        self.coeffs.iter().all(|p| p.0.iter().skip(2).all(|&c| c == 0.0))
    }

    fn max_speed(&self) -> (f64, f64) {
        const SAMPLES: usize = 64;
        let h = self.t1 - self.t0;
        let speed2 = |t: f64| self.state(t).1.norm_sq();
        let slope = |t: f64| {
            let (_, v, a) = self.state(t);
            v.dot(a)
        };
        let mut best = (speed2(self.t0), self.t0);
        let mut prev_t = self.t0;
        let mut prev_slope = slope(self.t0);
        for i in 1..=SAMPLES {
            let t = self.t0 + h * i as f64 / SAMPLES as f64;
            let s2 = speed2(t);
            if s2 > best.0 {
                best = (s2, t);
            }
            let sl = slope(t);
            // Extremum candidate of |v|^2: sign change of v.a from + to -.
            if prev_slope > 0.0 && sl < 0.0 {
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if slope(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tm = 0.5 * (lo + hi);
                let s2 = speed2(tm);
                if s2 > best.0 {
                    best = (s2, tm);
                }
            }
            prev_t = t;
            prev_slope = sl;
        }
        (best.0.sqrt(), best.1)
    }
}

/// Ordered, abutting polynomial segments without particle data.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePath {
    segments: Vec<Segment>,
}

impl PiecewisePath {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Domain("path needs at least one segment".into()));
        }
        for w in segments.windows(2) {
            if w[0].t1 != w[1].t0 {
                return Err(Error::Domain(format!(
                    "segments must abut: t_end {} != next t_start {}",
                    w[0].t1, w[1].t0
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.segments[0].t0, self.segments[self.segments.len() - 1].t1)
    }

    /// Interior junction times.
    pub fn breaks(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.t0).collect()
    }

    /// Index of the segment that supplies the `side` limit at `t`.
    pub fn segment_index(&self, t: f64, side: Side) -> Result<usize> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain(format!("t = {t} outside trajectory domain [{lo}, {hi}]")));
        }
        // First segment whose end is >= t (Left) or > t (Right).
        let idx = match side {
            Side::Left => self.segments.partition_point(|s| s.t1 < t),
            Side::Right => self.segments.partition_point(|s| s.t1 <= t),
        };
        Ok(idx.min(self.segments.len() - 1))
    }

    pub fn state(&self, t: f64, side: Side) -> Result<(Vec3, Vec3, Vec3)> {
        let i = self.segment_index(t, side)?;
        Ok(self.segments[i].state(t))
    }

    pub fn position(&self, t: f64) -> Result<Vec3> {
        let i = self.segment_index(t, Side::Right)?;
        Ok(self.segments[i].position(t))
    }

    /// Pointwise `self + eps * other` on the domain of `self`; `other` is
    /// treated as zero outside its own domain.
    pub fn add_scaled(&self, other: &PiecewisePath, eps: f64) -> Result<PiecewisePath> {
        let (lo, hi) = self.domain();
        let (olo, ohi) = other.domain();
        let mut cuts: Vec<f64> = self
            .segments
            .iter()
            .map(|s| s.t0)
            .chain(std::iter::once(hi))
            .chain(
                other
                    .segments
                    .iter()
                    .map(|s| s.t0)
                    .chain(std::iter::once(ohi))
                    .filter(|&t| t > lo && t < hi),
            )
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut out = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let base = &self.segments[self.segment_index(mid, Side::Right)?];
            let mut seg = base.restricted(a, b)?;
            if mid > olo && mid < ohi {
                let pert = &other.segments[other.segment_index(mid, Side::Right)?];
                let p = pert.restricted(a, b)?;
                for k in 0..3 {
                    seg.coeffs[k] = seg.coeffs[k].scaled_add(&p.coeffs[k], eps);
                }
            }
            out.push(seg);
        }
        PiecewisePath::new(out)
    }
}

/// Continuous piecewise-smooth trajectory of one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    path: PiecewisePath,
    particle: ParticleParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub max_speed: f64,
    pub max_speed_time: f64,
    /// (junction time, |x(l, Left) - x(l, Right)|)
    pub continuity_defects: Vec<(f64, f64)>,
    pub monotone: bool,
}

impl ValidationReport {
    pub fn max_continuity_defect(&self) -> f64 {
        self.continuity_defects.iter().map(|d| d.1).fold(0.0, f64::max)
    }

    pub fn is_valid(&self, continuity_tol: f64) -> bool {
        self.monotone && self.max_speed < 1.0 && self.max_continuity_defect() <= continuity_tol
    }
}

impl PiecewiseTrajectory {
    /// Builds and validates: abutting increasing segments, continuous position
    /// (to rounding), and subluminal speed everywhere.
    pub fn new(segments: Vec<Segment>, particle: ParticleParams) -> Result<Self> {
        let traj = Self::new_unchecked(segments, particle)?;
        let report = traj.validate();
        if report.max_speed >= 1.0 {
            return Err(Error::Superluminal {
                t: report.max_speed_time,
                speed: report.max_speed,
            });
        }
        for &(t, defect) in &report.continuity_defects {
            let scale = traj.position(t)?.max_abs().max(1.0);
            if defect > 1e-12 * scale {
                return Err(Error::Domain(format!(
                    "position discontinuity {defect:e} at junction t = {t}"
                )));
            }
        }
        Ok(traj)
    }

    /// Checks only the time structure; continuity and speed are left to [`validate`](Self::validate).
    pub fn new_unchecked(segments: Vec<Segment>, particle: ParticleParams) -> Result<Self> {
        Ok(Self {
            path: PiecewisePath::new(segments)?,
            particle,
        })
    }

    pub fn from_path(path: PiecewisePath, particle: ParticleParams) -> Result<Self> {
        Self::new(path.segments, particle)
    }

    /// Piecewise-constant-velocity trajectory through `(time, position)` vertices.
    pub fn polygonal_from_vertices(vertices: &[(f64, Vec3)], particle: ParticleParams) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Domain("polygon needs at least two vertices".into()));
        }
        let mut segs = Vec::with_capacity(vertices.len() - 1);
        for w in vertices.windows(2) {
            let ((ta, xa), (tb, xb)) = (w[0], w[1]);
            if !(tb > ta) {
                return Err(Error::Domain(format!("vertex times must increase ({ta} then {tb})")));
            }
            let v = (xb - xa) / (tb - ta);
            if v.norm() >= 1.0 {
                return Err(Error::Superluminal { t: ta, speed: v.norm() });
            }
            segs.push(Segment::linear(ta, tb, xa, v)?);
        }
        Self::new_unchecked(segs, particle)
    }

    /// C¹-or-broken cubic Hermite trajectory through knots; each knot carries
    /// its left and right velocity (equal for a smooth knot).
    pub fn cubic_hermite(knots: &[HermiteKnot], particle: ParticleParams) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Domain("Hermite trajectory needs at least two knots".into()));
        }
        let segs = knots
            .windows(2)
            .map(|w| Segment::cubic_hermite(w[0].t, w[1].t, w[0].x, w[0].v_right, w[1].x, w[1].v_left))
            .collect::<Result<Vec<_>>>()?;
        Self::new(segs, particle)
    }

    /// C² quintic Hermite trajectory sampled from a smooth motion given as
    /// `t -> (x, v, a)` on the supplied knot times.
    pub fn from_smooth<F>(times: &[f64], motion: F, particle: ParticleParams) -> Result<Self>
    where
        F: Fn(f64) -> (Vec3, Vec3, Vec3),
    {
        if times.len() < 2 {
            return Err(Error::Domain("need at least two knot times".into()));
        }
        let states: Vec<_> = times.iter().map(|&t| motion(t)).collect();
        let segs = times
            .windows(2)
            .zip(states.windows(2))
            .map(|(t, s)| {
                Segment::quintic_hermite(t[0], t[1], s[0].0, s[0].1, s[0].2, s[1].0, s[1].1, s[1].2)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segs, particle)
    }

    pub fn particle(&self) -> ParticleParams {
        self.particle
    }

    pub fn path(&self) -> &PiecewisePath {
        &self.path
    }

    pub fn segments(&self) -> &[Segment] {
        self.path.segments()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.path.domain()
    }

    pub fn breaks(&self) -> Vec<f64> {
        self.path.breaks()
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = self.domain();
        t >= lo && t <= hi
    }

    /// Position plus one-sided velocity and acceleration.
    pub fn evaluate_state(&self, t: f64, side: Side) -> Result<(Vec3, Vec3, Vec3)> {
        self.path.state(t, side)
    }

    pub fn position(&self, t: f64) -> Result<Vec3> {
        self.path.position(t)
    }

    /// True when every segment has zero acceleration.
    pub fn is_polygonal(&self) -> bool {
        self.segments().iter().all(Segment::is_linear)
    }

    pub fn validate(&self) -> ValidationReport {
        let segs = self.segments();
        let monotone = segs.iter().all(|s| s.t0 < s.t1) && segs.windows(2).all(|w| w[0].t1 == w[1].t0);
        let mut best = (0.0, segs[0].t0);
        for s in segs {
            let (sp, t) = s.max_speed();
            if sp > best.0 {
                best = (sp, t);
            }
        }
        let continuity_defects = segs
            .windows(2)
            .map(|w| {
                let t = w[1].t0;
                (t, (w[0].position(t) - w[1].position(t)).norm())
            })
            .collect();
        ValidationReport {
            max_speed: best.0,
            max_speed_time: best.1,
            continuity_defects,
            monotone,
        }
    }

    /// `self + eps * b`, with breaking points merged.
    pub fn perturbed(&self, b: &Perturbation, eps: f64) -> Result<Self> {
        let path = self.path.add_scaled(&b.path, eps)?;
        Self::from_path(path, self.particle)
    }

    /// Splits segments so that every time in `cuts` becomes a junction.
    /// The curve is unchanged (identity junctions).
    pub fn with_extra_breaks(&self, cuts: &[f64]) -> Result<Self> {
        let (lo, hi) = self.domain();
        let mut out = Vec::new();
        for s in self.segments() {
            let mut pts: Vec<f64> = cuts.iter().copied().filter(|&c| c > s.t0 && c < s.t1).collect();
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let mut a = s.t0;
            for c in pts.into_iter().chain(std::iter::once(s.t1)) {
                out.push(s.restricted(a, c)?);
                a = c;
            }
        }
        debug_assert!(out.first().map(|s| s.t0) == Some(lo) && out.last().map(|s| s.t1) == Some(hi));
        Self::new_unchecked(out, self.particle)
    }

    /// `inner` in place of `self` over the domain of `inner`, which must lie
    /// inside the domain of `self`. Positions must agree at the seams.
    pub fn spliced(&self, inner: &PiecewiseTrajectory) -> Result<Self> {
        let (a, b) = inner.domain();
        let (lo, hi) = self.domain();
        if a < lo || b > hi {
            return Err(Error::Domain(format!("cannot splice [{a}, {b}] into [{lo}, {hi}]")));
        }
        let mut segs = Vec::new();
        for s in self.segments().iter().filter(|s| s.t0 < a) {
            segs.push(s.restricted(s.t0, s.t1.min(a))?);
        }
        segs.extend(inner.segments().iter().cloned());
        for s in self.segments().iter().filter(|s| s.t1 > b) {
            segs.push(s.restricted(s.t0.max(b), s.t1)?);
        }
        Self::new(segs, self.particle)
    }

    /// Appends `other`, which must start where `self` ends.
    pub fn concat(&self, other: &PiecewiseTrajectory) -> Result<Self> {
        let mut segs = self.segments().to_vec();
        segs.extend(other.segments().iter().cloned());
        Self::new(segs, self.particle)
    }

    pub fn to_json(&self) -> TrajectoryFile {
        TrajectoryFile {
            particle: self.particle,
            segments: self
                .segments()
                .iter()
                .map(|s| SegmentFile {
                    t0: s.t0,
                    t1: s.t1,
                    kind: "polynomial".into(),
                    coeffs: s.coeffs.clone().map(|p| p.0),
                })
                .collect(),
        }
    }

    pub fn from_json(file: &TrajectoryFile) -> Result<Self> {
        let particle = ParticleParams::new(file.particle.mass, file.particle.charge)?;
        let segs = file
            .segments
            .iter()
            .map(|s| {
                if s.kind != "polynomial" {
                    return Err(Error::Config(format!("unsupported segment kind '{}'", s.kind)));
                }
                Segment::new(s.t0, s.t1, s.coeffs.clone().map(Poly))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segs, particle)
    }
}

/// Knot of a cubic Hermite trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteKnot {
    pub t: f64,
    pub x: Vec3,
    pub v_left: Vec3,
    pub v_right: Vec3,
}

impl HermiteKnot {
    pub fn smooth(t: f64, x: Vec3, v: Vec3) -> Self {
        Self { t, x, v_left: v, v_right: v }
    }
}

/// Serialized trajectory: coefficients are in powers of `t - t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub particle: ParticleParams,
    pub segments: Vec<SegmentFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFile {
    pub t0: f64,
    pub t1: f64,
    pub kind: String,
    pub coeffs: [Vec<f64>; 3],
}

/// Admissible variation of a trajectory on a window; vanishes at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    path: PiecewisePath,
}

impl Perturbation {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let path = PiecewisePath::new(segments)?;
        let (lo, hi) = path.domain();
        let end_tol = 1e-12;
        let b0 = path.state(lo, Side::Right)?.0;
        let b1 = path.state(hi, Side::Left)?.0;
        if b0.max_abs() > end_tol || b1.max_abs() > end_tol {
            return Err(Error::Contract(format!(
                "perturbation must vanish at window ends (|b(t0)| = {:e}, |b(t1)| = {:e})",
                b0.norm(),
                b1.norm()
            )));
        }
        for w in path.segments().windows(2) {
            let t = w[1].t0;
            let d = (w[0].position(t) - w[1].position(t)).norm();
            if d > end_tol {
                return Err(Error::Contract(format!("perturbation discontinuous at t = {t}")));
            }
        }
        Ok(Self { path })
    }

    /// Piecewise-linear perturbation through `(time, value)` vertices.
    pub fn polygonal(vertices: &[(f64, Vec3)]) -> Result<Self> {
        let segs = vertices
            .windows(2)
            .map(|w| Segment::linear(w[0].0, w[1].0, w[0].1, (w[1].1 - w[0].1) / (w[1].0 - w[0].0)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(segs)
    }

    /// Tent of height `peak` at `t_peak`, zero at `t0` and `t1`.
    pub fn tent(t0: f64, t_peak: f64, t1: f64, peak: Vec3) -> Result<Self> {
        Self::polygonal(&[(t0, Vec3::ZERO), (t_peak, peak), (t1, Vec3::ZERO)])
    }

    /// Smooth bump `amp * 16 s²(1-s)²` with `s = (t-t0)/(t1-t0)`.
    pub fn bump(t0: f64, t1: f64, amp: Vec3) -> Result<Self> {
        let h = t1 - t0;
        // 16 s^2 (1 - s)^2 = 16 (s^2 - 2 s^3 + s^4), with s = u / h.
        let c = [0, 1, 2].map(|k| {
            let a = 16.0 * amp[k];
            Poly(vec![0.0, 0.0, a / h.powi(2), -2.0 * a / h.powi(3), a / h.powi(4)])
        });
        Self::new(vec![Segment::new(t0, t1, c)?])
    }

    pub fn zero(t0: f64, t1: f64) -> Result<Self> {
        Self::new(vec![Segment::linear(t0, t1, Vec3::ZERO, Vec3::ZERO)?])
    }

    pub fn path(&self) -> &PiecewisePath {
        &self.path
    }

    pub fn domain(&self) -> (f64, f64) {
        self.path.domain()
    }

    pub fn breaks(&self) -> Vec<f64> {
        self.path.breaks()
    }

    /// Value and one-sided time derivative.
    pub fn value(&self, t: f64, side: Side) -> Result<(Vec3, Vec3)> {
        let (b, db, _) = self.path.state(t, side)?;
        Ok((b, db))
    }

    pub fn scaled(&self, factor: f64) -> Perturbation {
        let segs = self
            .path
            .segments()
            .iter()
            .map(|s| Segment {
                t0: s.t0,
                t1: s.t1,
                coeffs: s.coeffs.clone().map(|p| Poly(p.0.iter().map(|c| c * factor).collect())),
            })
            .collect();
        Perturbation {
            path: PiecewisePath { segments: segs },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> ParticleParams {
        ParticleParams::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn static_trajectory_state_is_zero() {
        let tr = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::ZERO), (3.0, Vec3::ZERO)],
            unit(),
        )
        .unwrap();
        for t in [0.0, 0.3, 1.0, 2.9, 3.0] {
            for side in [Side::Left, Side::Right] {
                let (x, v, a) = tr.evaluate_state(t, side).unwrap();
                assert_eq!((x, v, a), (Vec3::ZERO, Vec3::ZERO, Vec3::ZERO));
            }
        }
    }

    #[test]
    fn vertex_sides_select_one_sided_velocity() {
        let tr = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::new(0.6, 0.0, 0.0)), (2.0, Vec3::new(0.6, 0.6, 0.0))],
            unit(),
        )
        .unwrap();
        let (_, vl, _) = tr.evaluate_state(1.0, Side::Left).unwrap();
        let (_, vr, _) = tr.evaluate_state(1.0, Side::Right).unwrap();
        assert_eq!(vl, Vec3::new(0.6, 0.0, 0.0));
        assert_eq!(vr, Vec3::new(0.0, 0.6, 0.0));
        assert_eq!(tr.breaks(), vec![1.0]);
    }

    #[test]
    fn cubic_left_limit_acceleration() {
        let seg = Segment::new(
            0.0,
            0.5,
            [Poly(vec![0.0, 0.0, 0.0, 1.0]), Poly(vec![0.0]), Poly(vec![0.0])],
        )
        .unwrap();
        let tr = PiecewiseTrajectory::new(vec![seg], unit()).unwrap();
        let (x, v, a) = tr.evaluate_state(0.5, Side::Left).unwrap();
        assert_abs_diff_eq!(x.x, 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(v.x, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(a.x, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_is_error() {
        let tr = PiecewiseTrajectory::polygonal_from_vertices(&[(0.0, Vec3::ZERO), (1.0, Vec3::ZERO)], unit())
            .unwrap();
        assert!(matches!(tr.evaluate_state(1.5, Side::Right), Err(Error::Domain(_))));
        assert!(matches!(tr.evaluate_state(-0.1, Side::Left), Err(Error::Domain(_))));
    }

    #[test]
    fn polygonal_examples() {
        let tr = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::new(0.5, 0.0, 0.0))],
            unit(),
        )
        .unwrap();
        assert_eq!(tr.segments().len(), 1);
        assert_eq!(tr.evaluate_state(0.5, Side::Right).unwrap().1, Vec3::new(0.5, 0.0, 0.0));

        let tr2 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::new(0.5, 0.0, 0.0)), (2.0, Vec3::new(0.5, 0.5, 0.0))],
            unit(),
        )
        .unwrap();
        assert_eq!(tr2.segments().len(), 2);
        for side in [Side::Left, Side::Right] {
            assert_eq!(tr2.evaluate_state(0.5, side).unwrap().2, Vec3::ZERO);
        }

        let err = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::new(1.5, 0.0, 0.0))],
            unit(),
        );
        assert!(matches!(err, Err(Error::Superluminal { .. })));

        let err = PiecewiseTrajectory::polygonal_from_vertices(
            &[(1.0, Vec3::ZERO), (0.5, Vec3::new(0.1, 0.0, 0.0))],
            unit(),
        );
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn validate_reports_gap_and_speed() {
        let a = Segment::linear(0.0, 1.0, Vec3::ZERO, Vec3::new(0.5, 0.0, 0.0)).unwrap();
        let b = Segment::linear(1.0, 2.0, Vec3::new(0.501, 0.0, 0.0), Vec3::ZERO).unwrap();
        let tr = PiecewiseTrajectory::new_unchecked(vec![a.clone(), b.clone()], unit()).unwrap();
        let rep = tr.validate();
        assert_eq!(rep.continuity_defects.len(), 1);
        assert_abs_diff_eq!(rep.continuity_defects[0].1, 1e-3, epsilon = 1e-12);
        assert!(!rep.is_valid(1e-12));
        assert!(matches!(PiecewiseTrajectory::new(vec![a, b], unit()), Err(Error::Domain(_))));

        let ok = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::new(0.5, 0.0, 0.0)), (2.0, Vec3::new(0.5, 0.5, 0.0))],
            unit(),
        )
        .unwrap();
        assert!(ok.validate().is_valid(1e-12));
    }

    #[test]
    fn validate_finds_interior_speed_peak() {
        // v(t) = c (4t - 4t^2) peaks at t = 1/2 with speed c.
        let c = 0.999;
        let coeffs = [
            Poly(vec![0.0, 0.0, c * 2.0, -c * 4.0 / 3.0]),
            Poly(vec![0.0]),
            Poly(vec![0.0]),
        ];
        let seg = Segment::new(0.0, 1.0, coeffs).unwrap();
        let tr = PiecewiseTrajectory::new(vec![seg], unit()).unwrap();
        let rep = tr.validate();
        // dense-sampling oracle
        let dense = (0..=100_000)
            .map(|i| tr.evaluate_state(i as f64 / 100_000.0, Side::Right).unwrap().1.norm())
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(dense, 0.999, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.max_speed, 0.999, epsilon = 1e-12);
    }

    #[test]
    fn poly_shift_matches_direct_evaluation() {
        let p = Poly(vec![1.0, -2.0, 0.5, 3.0, -0.25]);
        let q = p.shifted(0.7);
        for s in [-1.0, 0.0, 0.3, 2.0] {
            assert_abs_diff_eq!(q.eval(s), p.eval(s + 0.7), epsilon = 1e-12);
        }
    }

    #[test]
    fn spurious_break_keeps_curve() {
        let tr = PiecewiseTrajectory::cubic_hermite(
            &[
                HermiteKnot::smooth(0.0, Vec3::ZERO, Vec3::new(0.1, 0.2, 0.0)),
                HermiteKnot::smooth(2.0, Vec3::new(0.3, 0.1, 0.2), Vec3::new(-0.1, 0.0, 0.3)),
            ],
            unit(),
        )
        .unwrap();
        let split = tr.with_extra_breaks(&[0.7]).unwrap();
        assert_eq!(split.breaks(), vec![0.7]);
        for t in [0.1, 0.7, 1.5] {
            let a = tr.evaluate_state(t, Side::Right).unwrap();
            let b = split.evaluate_state(t, Side::Left).unwrap();
            assert!((a.0 - b.0).norm() < 1e-14 && (a.1 - b.1).norm() < 1e-14);
        }
    }

    #[test]
    fn perturbation_contract() {
        assert!(Perturbation::tent(0.0, 1.0, 2.0, Vec3::X).is_ok());
        let bad = Perturbation::polygonal(&[(0.0, Vec3::X), (1.0, Vec3::ZERO)]);
        assert!(matches!(bad, Err(Error::Contract(_))));
        let bump = Perturbation::bump(1.0, 3.0, Vec3::new(0.0, 2.0, 0.0)).unwrap();
        let (b, _) = bump.value(2.0, Side::Right).unwrap();
        assert_abs_diff_eq!(b.y, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn perturbed_merges_breaks() {
        let tr = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (4.0, Vec3::new(1.0, 0.0, 0.0))],
            unit(),
        )
        .unwrap();
        let b = Perturbation::tent(1.0, 2.0, 3.0, Vec3::Y).unwrap();
        let p = tr.perturbed(&b, 0.1).unwrap();
        assert_eq!(p.breaks(), vec![1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(p.position(2.0).unwrap().y, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.position(2.0).unwrap().x, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn json_roundtrip() {
        let tr = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::ZERO), (1.0, Vec3::new(0.5, 0.0, 0.0)), (2.0, Vec3::new(0.5, 0.5, 0.0))],
            unit(),
        )
        .unwrap();
        let text = serde_json::to_string(&tr.to_json()).unwrap();
        assert!(text.contains("\"kind\":\"polynomial\""));
        let back = PiecewiseTrajectory::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, tr);
    }
}

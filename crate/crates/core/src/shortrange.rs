//! Orbits with vanishing far fields: the separation family, rigidity of
//! smooth solutions, sewing chains, and construction of a partner trajectory
//! from a given one.
//!
//! Observer times are measured with the sphere radius factored out, so a
//! particle event `(τ, x)` is seen in direction `n` at `t = τ − n·x`. Interval
//! edges are events; their observer-time images `t_edge − n·x_edge` stay
//! ordered for every `n` as long as consecutive edges are causally ordered.
//!
//! On interval σ the separation seen in direction `n` is
//! `x1(t1) − x2(t2) = D_σ(n) + (t1 − t2) n − (t − t_σ) n×L_σ(n)`,
//! with `t_σ` the image of the interval's right edge and `n·D = n·L = 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightcone::{cone_time_sided, far_cone, Branch};
use crate::trajectory::{HermiteKnot, ParticleParams, PiecewiseTrajectory, Side};
use crate::vec3::Vec3;

/// Largest harmonic degree accepted in coefficient tables.
pub const MAX_DEGREE: usize = 8;

/// Transversality tolerance for family fields.
pub const TRANSVERSE_TOL: f64 = 1e-12;

/// Default tolerance on the spread of per-direction partner positions.
pub const DEFAULT_SPREAD_TOL: f64 = 1e-6;

/// `1/(1 − n·v1) − 1/(1 − n·v2)`.
pub fn k12(v1: Vec3, v2: Vec3, n: Vec3) -> f64 {
    1.0 / (1.0 - n.dot(v1)) - 1.0 / (1.0 - n.dot(v2))
}

/// Velocity-like difference `v1/(1 − n·v1) − v2/(1 − n·v2)`.
fn dilated_difference(v1: Vec3, v2: Vec3, n: Vec3) -> Vec3 {
    v1 / (1.0 - n.dot(v1)) - v2 / (1.0 - n.dot(v2))
}

/// Number of real spherical harmonics with degree at most `lmax`.
pub fn harmonic_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// Orthonormal real spherical harmonics `Y_lm(n)` for `l ≤ lmax`, indexed by
/// `l² + l + m`. Negative `m` carries `sin(|m|φ)`.
#[allow(clippy::needless_range_loop)] // Legendre recurrences read clearest indexed
pub fn real_spherical_harmonics(lmax: usize, n: Vec3) -> Vec<f64> {
    let z = n.z.clamp(-1.0, 1.0);
    let rho = (n.x * n.x + n.y * n.y).sqrt();
    let phi = n.y.atan2(n.x);
    let mut out = vec![0.0; harmonic_count(lmax)];
    // Associated Legendre functions without the Condon-Shortley phase.
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    p[0][0] = 1.0;
    for m in 1..=lmax {
        p[m][m] = p[m - 1][m - 1] * (2 * m - 1) as f64 * rho;
    }
    for m in 0..lmax {
        p[m + 1][m] = (2 * m + 1) as f64 * z * p[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            p[l][m] = ((2 * l - 1) as f64 * z * p[l - 1][m] - (l + m - 1) as f64 * p[l - 2][m]) / (l - m) as f64;
        }
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    for l in 0..=lmax {
        for m in 0..=l {
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| k as f64).product();
            let norm = ((2 * l + 1) as f64 / four_pi / ratio).sqrt();
            let base = l * l + l;
            if m == 0 {
                out[base] = norm * p[l][0];
            } else {
                let (s, c) = (m as f64 * phi).sin_cos();
                let scale = std::f64::consts::SQRT_2 * norm * p[l][m];
                out[base + m] = scale * c;
                out[base - m] = scale * s;
            }
        }
    }
    out
}

/// A vector field on the unit sphere of directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionField {
    /// Harmonic expansion per Cartesian component, projected transverse to `n`.
    Harmonics { coeffs: [Vec<f64>; 3] },
    /// Harmonic expansion without projection; only transverse tables validate.
    Raw { coeffs: [Vec<f64>; 3] },
    /// `n × (v1/(1 − n·v1) − v2/(1 − n·v2))`: the growth term of two
    /// constant-velocity segments.
    VelocityPair { v1: Vec3, v2: Vec3 },
    /// Transverse separation of the lines `a1 + v1 τ` and `a2 + v2 τ` seen at
    /// the observer time of the interval's right edge.
    LinearPair { a1: Vec3, v1: Vec3, a2: Vec3, v2: Vec3 },
}

impl DirectionField {
    pub fn zero() -> Self {
        DirectionField::Harmonics {
            coeffs: [vec![0.0], vec![0.0], vec![0.0]],
        }
    }

    /// Constant vector projected transverse to each direction.
    pub fn projected_constant(c: Vec3) -> Self {
        let y00 = 0.5 / std::f64::consts::PI.sqrt();
        DirectionField::Harmonics {
            coeffs: [vec![c.x / y00], vec![c.y / y00], vec![c.z / y00]],
        }
    }

    fn degree(coeffs: &[Vec<f64>; 3]) -> Result<usize> {
        let len = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != len) {
            return Err(Error::Domain("harmonic coefficient rows differ in length".into()));
        }
        let lmax = (len as f64).sqrt().round() as usize;
        if lmax == 0 || harmonic_count(lmax - 1) != len || lmax - 1 > MAX_DEGREE {
            return Err(Error::Domain(format!(
                "harmonic table length {len} is not (l+1)² for l ≤ {MAX_DEGREE}"
            )));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite harmonic coefficient".into()));
        }
        Ok(lmax - 1)
    }

    /// Value at direction `n` for an interval whose right edge is seen at `t_ref`.
    pub fn eval(&self, n: Vec3, t_ref: f64) -> Vec3 {
        match self {
            DirectionField::Harmonics { coeffs } => expand(coeffs, n).transverse_to(n),
            DirectionField::Raw { coeffs } => expand(coeffs, n),
            DirectionField::VelocityPair { v1, v2 } => n.cross(dilated_difference(*v1, *v2, n)),
            DirectionField::LinearPair { a1, v1, a2, v2 } => {
                let tau1 = (t_ref + n.dot(*a1)) / (1.0 - n.dot(*v1));
                let tau2 = (t_ref + n.dot(*a2)) / (1.0 - n.dot(*v2));
                ((*a1 + *v1 * tau1) - (*a2 + *v2 * tau2)).transverse_to(n)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DirectionField::Harmonics { coeffs } | DirectionField::Raw { coeffs } => Self::degree(coeffs).map(|_| ()),
            DirectionField::VelocityPair { v1, v2 } | DirectionField::LinearPair { v1, v2, .. } => {
                for v in [v1, v2] {
                    if !v.is_finite() || v.norm() >= 1.0 {
                        return Err(Error::Domain(format!("segment velocity {:?} is not subluminal", v.to_array())));
                    }
                }
                Ok(())
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            DirectionField::Harmonics { coeffs } | DirectionField::Raw { coeffs } => {
                coeffs.iter().flatten().all(|&c| c == 0.0)
            }
            DirectionField::VelocityPair { v1, v2 } => v1 == v2,
            DirectionField::LinearPair { .. } => false,
        }
    }
}

fn expand(coeffs: &[Vec<f64>; 3], n: Vec3) -> Vec3 {
    let lmax = (coeffs[0].len() as f64).sqrt().round() as usize - 1;
    let y = real_spherical_harmonics(lmax, n);
    let dot = |c: &Vec<f64>| c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
    Vec3::new(dot(&coeffs[0]), dot(&coeffs[1]), dot(&coeffs[2]))
}

/// Coefficient table as stored in parameter files: a bare 3-row array is a
/// projected harmonic expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum FieldFile {
    Table([Vec<f64>; 3]),
    Tagged(DirectionField),
}

impl From<FieldFile> for DirectionField {
    fn from(f: FieldFile) -> Self {
        match f {
            FieldFile::Table(coeffs) => DirectionField::Harmonics { coeffs },
            FieldFile::Tagged(d) => d,
        }
    }
}

/// An event whose observer-time image bounds a family interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub t_edge: f64,
    #[serde(default = "zero_vec")]
    pub x_edge: Vec3,
}

fn zero_vec() -> Vec3 {
    Vec3::ZERO
}

impl EdgeEvent {
    pub fn image(&self, n: Vec3) -> f64 {
        self.t_edge - n.dot(self.x_edge)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyInterval {
    #[serde(flatten)]
    pub edge: EdgeEvent,
    #[serde(rename = "D_coeffs", with = "field_serde")]
    pub d: DirectionField,
    #[serde(rename = "L_coeffs", with = "field_serde")]
    pub l: DirectionField,
}

mod field_serde {
    use super::{DirectionField, FieldFile};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &DirectionField, s: S) -> Result<S::Ok, S::Error> {
        d.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DirectionField, D::Error> {
        Ok(FieldFile::deserialize(d)?.into())
    }
}

/// Piecewise family of separations. Interval σ is `(edge_{σ−1}, edge_σ]` in
/// observer time; the first interval is unbounded below unless `start` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationFamilyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<EdgeEvent>,
    pub intervals: Vec<FamilyInterval>,
}

/// Directions used to check family invariants.
fn validation_directions() -> Vec<Vec3> {
    let mut dirs = Vec::new();
    for i in 0..12 {
        let z = -1.0 + (2.0 * i as f64 + 1.0) / 12.0;
        let r = (1.0 - z * z).sqrt();
        for j in 0..12 {
            let phi = (j as f64 + 0.37 * i as f64) * std::f64::consts::TAU / 12.0;
            dirs.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
    }
    dirs.extend([Vec3::X, Vec3::Y, Vec3::Z, -Vec3::X, -Vec3::Y, -Vec3::Z]);
    dirs
}

impl SeparationFamilyParams {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::Domain("separation family needs at least one interval".into()));
        }
        let mut edges: Vec<EdgeEvent> = self.start.iter().copied().collect();
        edges.extend(self.intervals.iter().map(|iv| iv.edge));
        for e in &edges {
            if !e.t_edge.is_finite() || !e.x_edge.is_finite() {
                return Err(Error::Domain("non-finite interval edge".into()));
            }
        }
        for w in edges.windows(2) {
            if w[1].t_edge <= w[0].t_edge {
                return Err(Error::Domain(format!(
                    "interval edges must increase: {} then {}",
                    w[0].t_edge, w[1].t_edge
                )));
            }
        }
        let dirs = validation_directions();
        for w in edges.windows(2) {
            // Causal order keeps images ordered in every direction.
            let gap = w[1].t_edge - w[0].t_edge;
            let dist = (w[1].x_edge - w[0].x_edge).norm();
            if gap < dist * (1.0 - 1e-12) - 1e-12 {
                return Err(Error::Domain(format!(
                    "edges at t = {} and t = {} are spacelike separated",
                    w[0].t_edge, w[1].t_edge
                )));
            }
        }
        for (k, iv) in self.intervals.iter().enumerate() {
            iv.d.validate()?;
            iv.l.validate()?;
            for &n in &dirs {
                let t_ref = iv.edge.image(n);
                let d = iv.d.eval(n, t_ref);
                let l = iv.l.eval(n, t_ref);
                let scale_d = d.norm().max(1.0);
                let scale_l = l.norm().max(1.0);
                if n.dot(d).abs() > TRANSVERSE_TOL * scale_d || n.dot(l).abs() > TRANSVERSE_TOL * scale_l {
                    return Err(Error::Domain(format!(
                        "interval {k}: D or L is not transverse at n = {:?} (n·D = {:e}, n·L = {:e})",
                        n.to_array(),
                        n.dot(d),
                        n.dot(l)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the interval containing observer time `t` in direction `n`.
    pub fn interval_index(&self, t: f64, n: Vec3) -> Result<usize> {
        if let Some(s) = &self.start {
            if t <= s.image(n) {
                return Err(Error::Domain(format!("observer time {t} precedes the first interval")));
            }
        }
        self.intervals
            .iter()
            .position(|iv| t <= iv.edge.image(n))
            .ok_or_else(|| Error::Domain(format!("observer time {t} follows the last interval")))
    }

    /// Every growth field is of velocity-pair type or zero, so each
    /// direction sees a piecewise-linear separation.
    pub fn is_polygonal(&self) -> bool {
        self.intervals
            .iter()
            .all(|iv| matches!(iv.l, DirectionField::VelocityPair { .. }) || iv.l.is_zero())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// `D_σ(n) + dt12·n − (t − t_σ) n×L_σ(n)`.
pub fn separation_family(params: &SeparationFamilyParams, t: f64, n: Vec3, dt12: f64) -> Result<Vec3> {
    let iv = &params.intervals[params.interval_index(t, n)?];
    let t_ref = iv.edge.image(n);
    Ok(iv.d.eval(n, t_ref) + n * dt12 - n.cross(iv.l.eval(n, t_ref)) * (t - t_ref))
}

/// Time derivative of the family at fixed `n` (excluding the `dt12` term).
fn separation_growth(params: &SeparationFamilyParams, t: f64, n: Vec3) -> Result<Vec3> {
    let iv = &params.intervals[params.interval_index(t, n)?];
    Ok(-n.cross(iv.l.eval(n, iv.edge.image(n))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    /// Largest `|v1/(1−n·v1) − v2/(1−n·v2) − K12 n|` over the samples.
    pub max_violation: f64,
    /// Best-fit `K12` per sample, which equals `k12(v1, v2, n)`.
    pub k12: Vec<f64>,
}

fn spans_space(dirs: &[Vec3]) -> bool {
    if dirs.len() < 3 {
        return false;
    }
    let scale: f64 = dirs.iter().map(|n| n.norm_sq()).sum();
    let mut best: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in (i + 1)..dirs.len() {
            for k in (j + 1)..dirs.len() {
                best = best.max(dirs[i].cross(dirs[j]).dot(dirs[k]).abs());
            }
        }
        if best > 1e-9 * scale.max(1.0) {
            return true;
        }
    }
    best > 1e-9
}

/// How far the smooth (no growth term) velocity condition is from holding
/// across the sampled directions.
pub fn rigidity_check(v1: Vec3, v2: Vec3, n_samples: &[Vec3]) -> Result<RigidityReport> {
    if !spans_space(n_samples) {
        return Err(Error::InsufficientSampling(format!(
            "need at least 3 non-coplanar directions, got {}",
            n_samples.len()
        )));
    }
    for v in [v1, v2] {
        if v.norm() >= 1.0 {
            return Err(Error::Superluminal { t: f64::NAN, speed: v.norm() });
        }
    }
    let mut max_violation: f64 = 0.0;
    let mut fits = Vec::with_capacity(n_samples.len());
    for &n in n_samples {
        let n = n.normalized();
        let w = dilated_difference(v1, v2, n);
        let k = n.dot(w);
        max_violation = max_violation.max((w - n * k).norm());
        fits.push(k);
    }
    Ok(RigidityReport {
        max_violation,
        k12: fits,
    })
}

/// `count` directions on a cone of half-angle `angle` about `axis`.
pub fn cone_directions(axis: Vec3, angle: f64, count: usize) -> Vec<Vec3> {
    let a = axis.normalized();
    let helper = if a.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    let e1 = a.cross(helper).normalized();
    let e2 = a.cross(e1);
    (0..count)
        .map(|k| {
            let phi = k as f64 * std::f64::consts::TAU / count as f64;
            a * angle.cos() + (e1 * phi.cos() + e2 * phi.sin()) * angle.sin()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    /// 1 or 2.
    pub particle: u8,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingChain {
    pub direction: ChainDirection,
    pub entries: Vec<ChainEntry>,
    /// The chain left a trajectory domain before reaching `count` entries.
    pub truncated: bool,
}

/// Largest cone residual accepted between consecutive chain entries.
pub const CHAIN_TOL: f64 = 1e-10;

/// Alternating cone map starting from `seed`, which is not included.
pub fn sewing_chain(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    seed: ChainEntry,
    direction: ChainDirection,
    count: usize,
) -> Result<SewingChain> {
    if seed.particle != 1 && seed.particle != 2 {
        return Err(Error::Domain(format!("particle index must be 1 or 2, got {}", seed.particle)));
    }
    let branch = match direction {
        ChainDirection::Forward => Branch::Advanced,
        ChainDirection::Backward => Branch::Retarded,
    };
    let traj = |p: u8| if p == 1 { traj1 } else { traj2 };
    let mut entries = Vec::with_capacity(count);
    let mut cur = seed;
    let mut truncated = false;
    for _ in 0..count {
        let x = traj(cur.particle).position(cur.t)?;
        let other = 3 - cur.particle;
        let c = match cone_time_sided(traj(other), cur.t, x, branch, Side::Right) {
            Ok(c) => c,
            Err(Error::InsufficientHistory { .. }) | Err(Error::Domain(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let residual = ((c.t_k - cur.t).abs() - c.r).abs();
        if residual > CHAIN_TOL * c.t_k.abs().max(1.0) {
            return Err(Error::Convergence {
                what: "sewing-chain cone step",
                iterations: 0,
                residual,
            });
        }
        cur = ChainEntry { particle: other, t: c.t_k };
        entries.push(cur);
    }
    Ok(SewingChain {
        direction,
        entries,
        truncated,
    })
}

/// Recipe for a polygonal pair whose velocity breaks form one forward
/// sewing chain: particle 2 breaks at `t = 0`, then particle 1 on the
/// advanced cone of that event, then particle 2 again, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingPairSpec {
    /// Position of particle 1 at `t = 0` on its first segment.
    pub x1_0: Vec3,
    /// Position of particle 2 at its first break, `t = 0`.
    pub x2_0: Vec3,
    /// Segment velocities of particle 1, earliest first.
    pub velocities1: Vec<Vec3>,
    /// Segment velocities of particle 2, earliest first.
    pub velocities2: Vec<Vec3>,
    pub t_start: f64,
    pub t_end: f64,
    pub particle1: ParticleParams,
    pub particle2: ParticleParams,
}

/// Time after `t_e` at which the line `p + u (τ − t_p)` meets the future
/// light cone of the event `(t_e, x_e)`.
fn advanced_hit(t_e: f64, x_e: Vec3, t_p: f64, p: Vec3, u: Vec3) -> f64 {
    let d0 = p + u * (t_e - t_p) - x_e;
    let uu = u.norm_sq();
    let ud = u.dot(d0);
    t_e + (ud + (ud * ud + (1.0 - uu) * d0.norm_sq()).sqrt()) / (1.0 - uu)
}

pub fn polygonal_sewing_pair(spec: &SewingPairSpec) -> Result<(PiecewiseTrajectory, PiecewiseTrajectory)> {
    let (n1, n2) = (spec.velocities1.len(), spec.velocities2.len());
    if n1 == 0 || n2 < 2 || !(n1 == n2 - 1 || n1 == n2) {
        return Err(Error::Domain(format!(
            "sewing pair needs k+1 or k velocities for particle 1 and k+1 ≥ 2 for particle 2, got {n1} and {n2}"
        )));
    }
    for v in spec.velocities1.iter().chain(&spec.velocities2) {
        if !(v.norm() < 1.0) {
            return Err(Error::Superluminal { t: f64::NAN, speed: v.norm() });
        }
    }
    if !(spec.t_start < 0.0) {
        return Err(Error::Domain("t_start must precede the first break at t = 0".into()));
    }
    // Lines as (anchor time, anchor position, velocity).
    let mut line1 = (0.0, spec.x1_0, spec.velocities1[0]);
    let mut line2 = (0.0, spec.x2_0, spec.velocities2[1]);
    let mut verts1 = vec![(spec.t_start, spec.x1_0 + spec.velocities1[0] * spec.t_start)];
    let mut verts2 = vec![
        (spec.t_start, spec.x2_0 + spec.velocities2[0] * spec.t_start),
        (0.0, spec.x2_0),
    ];
    let mut event = (0.0, spec.x2_0);
    let (mut i1, mut i2) = (1, 2);
    loop {
        let on_one = verts1.len() < verts2.len();
        let (line, vel, idx, verts) = if on_one {
            (&mut line1, &spec.velocities1, &mut i1, &mut verts1)
        } else {
            (&mut line2, &spec.velocities2, &mut i2, &mut verts2)
        };
        if *idx >= vel.len() {
            break;
        }
        let t_hit = advanced_hit(event.0, event.1, line.0, line.1, line.2);
        if t_hit >= spec.t_end {
            return Err(Error::Domain(format!(
                "break at t = {t_hit} falls after the end time {}",
                spec.t_end
            )));
        }
        let x_hit = line.1 + line.2 * (t_hit - line.0);
        verts.push((t_hit, x_hit));
        *line = (t_hit, x_hit, vel[*idx]);
        *idx += 1;
        event = (t_hit, x_hit);
    }
    let close = |line: (f64, Vec3, Vec3)| (spec.t_end, line.1 + line.2 * (spec.t_end - line.0));
    verts1.push(close(line1));
    verts2.push(close(line2));
    Ok((
        PiecewiseTrajectory::polygonal_from_vertices(&verts1, spec.particle1)?,
        PiecewiseTrajectory::polygonal_from_vertices(&verts2, spec.particle2)?,
    ))
}

/// Family parameters reproducing a polygonal pair whose breaking points are
/// causally ordered (as along a sewing chain).
pub fn polygonal_family(traj1: &PiecewiseTrajectory, traj2: &PiecewiseTrajectory) -> Result<SeparationFamilyParams> {
    if !traj1.is_polygonal() || !traj2.is_polygonal() {
        return Err(Error::Domain("polygonal family needs two polygonal trajectories".into()));
    }
    let mut events: Vec<(f64, Vec3)> = Vec::new();
    for traj in [traj1, traj2] {
        for l in traj.breaks() {
            events.push((l, traj.position(l)?));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (a1, b1) = traj1.domain();
    let (a2, b2) = traj2.domain();
    let anchor_first = events.first().map(|e| e.1).unwrap_or(traj2.position(a2)?);
    let anchor_last = events.last().map(|e| e.1).unwrap_or(anchor_first);
    // Bracketing edges timelike to every trajectory point.
    let reach_lo = [(a1, traj1.position(a1)?), (a2, traj2.position(a2)?)]
        .iter()
        .map(|(t, x)| t - (*x - anchor_first).norm())
        .fold(f64::INFINITY, f64::min);
    let reach_hi = [(b1, traj1.position(b1)?), (b2, traj2.position(b2)?)]
        .iter()
        .map(|(t, x)| t + (*x - anchor_last).norm())
        .fold(f64::NEG_INFINITY, f64::max);
    let start_t = reach_lo.min(events.first().map_or(reach_lo, |e| e.0)) - 1.0;
    let end_t = reach_hi.max(events.last().map_or(reach_hi, |e| e.0)) + 1.0;
    events.push((end_t, anchor_last));
    let line = |traj: &PiecewiseTrajectory, t: f64| -> Result<(Vec3, Vec3)> {
        let seg = &traj.segments()[traj.path().segment_index(t, Side::Left)?];
        let (x, v, _) = seg.state(seg.t0);
        Ok((x - v * seg.t0, v))
    };
    let mut intervals = Vec::with_capacity(events.len());
    for &(t_e, x_e) in &events {
        // Segments active just before the right edge of this interval.
        let (p1, v1) = line(traj1, t_e.clamp(a1, b1))?;
        let (p2, v2) = line(traj2, t_e.clamp(a2, b2))?;
        intervals.push(FamilyInterval {
            edge: EdgeEvent { t_edge: t_e, x_edge: x_e },
            d: DirectionField::LinearPair { a1: p1, v1, a2: p2, v2 },
            l: DirectionField::VelocityPair { v1, v2 },
        });
    }
    let params = SeparationFamilyParams {
        start: Some(EdgeEvent {
            t_edge: start_t,
            x_edge: anchor_first,
        }),
        intervals,
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Largest distance of a per-direction partner position from the
    /// consensus position, over all `t1`.
    pub max_spread: f64,
    /// `(t1, spread)` for every fitted time.
    pub spreads: Vec<(f64, f64)>,
    pub max_iterations: usize,
    pub directions: usize,
    pub polygonal_fit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructOptions {
    pub spread_tol: f64,
    pub max_iter: usize,
    /// Parameters of the constructed particle; defaults to the partner's mass
    /// with opposite charge.
    pub particle: Option<ParticleParams>,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        Self {
            spread_tol: DEFAULT_SPREAD_TOL,
            max_iter: 60,
            particle: None,
        }
    }
}

/// Candidate partner position `F_n(x1)` and its derivative with respect to
/// the observer time, for a trial position `x1` at time `t1`.
fn candidate(
    traj2: &PiecewiseTrajectory,
    params: &SeparationFamilyParams,
    t1: f64,
    n: Vec3,
    x1: Vec3,
) -> Result<(Vec3, Vec3)> {
    let t = t1 - n.dot(x1);
    let c = far_cone(traj2, t, n, 0.0, Branch::Retarded, Side::Right)?;
    let sep = separation_family(params, t, n, t1 - c.t_k)?;
    let k = 1.0 - n.dot(c.v);
    let growth = (c.v - n) / k + separation_growth(params, t, n)?;
    Ok((c.x + sep, growth))
}

fn solve3(m: [[f64; 3]; 3], b: Vec3) -> Option<Vec3> {
    let col = |j: usize| Vec3::new(m[0][j], m[1][j], m[2][j]);
    let (c0, c1, c2) = (col(0), col(1), col(2));
    let det = c0.dot(c1.cross(c2));
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some(Vec3::new(
        b.dot(c1.cross(c2)) / det,
        c0.dot(b.cross(c2)) / det,
        c0.dot(c1.cross(b)) / det,
    ))
}

/// Consensus partner position at `t1`: Gauss-Newton on `Σ_n |F_n(x) − x|²`.
fn consensus_position(
    traj2: &PiecewiseTrajectory,
    params: &SeparationFamilyParams,
    t1: f64,
    dirs: &[Vec3],
    max_iter: usize,
) -> Result<(Vec3, f64, usize)> {
    let (lo, hi) = traj2.domain();
    let mut x = traj2.position(t1.clamp(lo, hi))?;
    for it in 1..=max_iter {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = Vec3::ZERO;
        let mut spread: f64 = 0.0;
        for &n in dirs {
            let (f, g) = candidate(traj2, params, t1, n, x)?;
            let r = f - x;
            spread = spread.max(r.norm());
            // J = −I − g nᵀ.
            let jcol = |j: usize| -> Vec3 { Vec3::new(0.0, 0.0, 0.0) - g * n[j] - unit(j) };
            let cols = [jcol(0), jcol(1), jcol(2)];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += cols[a].dot(cols[b]);
                }
            }
            jtr += Vec3::new(cols[0].dot(r), cols[1].dot(r), cols[2].dot(r));
        }
        let step = solve3(jtj, -jtr).ok_or(Error::Convergence {
            what: "partner construction (singular normal matrix)",
            iterations: it,
            residual: spread,
        })?;
        x += step;
        if step.norm() <= 1e-15 * x.norm().max(1.0) || spread == 0.0 {
            let spread = dirs
                .iter()
                .map(|&n| Ok((candidate(traj2, params, t1, n, x)?.0 - x).norm()))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            return Ok((x, spread, it));
        }
    }
    Err(Error::Convergence {
        what: "partner construction",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

fn unit(j: usize) -> Vec3 {
    [Vec3::X, Vec3::Y, Vec3::Z][j]
}

pub fn construct_partner(
    traj2: &PiecewiseTrajectory,
    params: &SeparationFamilyParams,
    n_grid: &[Vec3],
    t1_grid: &[f64],
) -> Result<(PiecewiseTrajectory, ConsistencyReport)> {
    construct_partner_with(traj2, params, n_grid, t1_grid, ConstructOptions::default())
}

/// Solves for particle 1 at each `t1` jointly over all directions and fits a
/// trajectory through the consensus positions. Interval edges inside the
/// `t1` range are added to the grid so polygonal fits keep their corners.
pub fn construct_partner_with(
    traj2: &PiecewiseTrajectory,
    params: &SeparationFamilyParams,
    n_grid: &[Vec3],
    t1_grid: &[f64],
    opts: ConstructOptions,
) -> Result<(PiecewiseTrajectory, ConsistencyReport)> {
    params.validate()?;
    if !spans_space(n_grid) {
        return Err(Error::InsufficientSampling(format!(
            "need at least 3 non-coplanar directions, got {}",
            n_grid.len()
        )));
    }
    let dirs: Vec<Vec3> = n_grid.iter().map(|n| n.normalized()).collect();
    let mut times: Vec<f64> = t1_grid.to_vec();
    if times.len() < 2 || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("t1 grid needs at least two finite times".into()));
    }
    times.sort_by(f64::total_cmp);
    let (lo, hi) = (times[0], times[times.len() - 1]);
    times.extend(
        params
            .intervals
            .iter()
            .map(|iv| iv.edge.t_edge)
            .filter(|&t| t > lo && t < hi),
    );
    times.sort_by(f64::total_cmp);
    times.dedup();
    let solved = times
        .par_iter()
        .map(|&t1| consensus_position(traj2, params, t1, &dirs, opts.max_iter))
        .collect::<Result<Vec<_>>>()?;
    let polygonal = params.is_polygonal();
    let report = ConsistencyReport {
        max_spread: solved.iter().map(|s| s.1).fold(0.0, f64::max),
        spreads: times.iter().zip(&solved).map(|(&t, s)| (t, s.1)).collect(),
        max_iterations: solved.iter().map(|s| s.2).max().unwrap_or(0),
        directions: dirs.len(),
        polygonal_fit: polygonal,
    };
    if !(report.max_spread <= opts.spread_tol) {
        return Err(Error::InconsistentParams {
            spread: report.max_spread,
            tol: opts.spread_tol,
            report: Box::new(report),
        });
    }
    let p2 = traj2.particle();
    let particle = match opts.particle {
        Some(p) => p,
        None => ParticleParams::new(p2.mass, -p2.charge)?,
    };
    let points: Vec<(f64, Vec3)> = times.iter().zip(&solved).map(|(&t, s)| (t, s.0)).collect();
    let traj1 = if polygonal {
        PiecewiseTrajectory::polygonal_from_vertices(&points, particle)?
    } else {
        cubic_fit(&points, particle)?
    };
    Ok((traj1, report))
}

/// C¹ cubic Hermite through the points with three-point velocity estimates.
fn cubic_fit(points: &[(f64, Vec3)], particle: ParticleParams) -> Result<PiecewiseTrajectory> {
    let n = points.len();
    let slope = |i: usize, j: usize| (points[j].1 - points[i].1) / (points[j].0 - points[i].0);
    let knots: Vec<HermiteKnot> = (0..n)
        .map(|i| {
            let v = if n == 2 {
                slope(0, 1)
            } else if i == 0 {
                three_point(points, 0, 1, 2, points[0].0)
            } else if i == n - 1 {
                three_point(points, n - 3, n - 2, n - 1, points[n - 1].0)
            } else {
                three_point(points, i - 1, i, i + 1, points[i].0)
            };
            HermiteKnot::smooth(points[i].0, points[i].1, v)
        })
        .collect();
    PiecewiseTrajectory::cubic_hermite(&knots, particle)
}

/// Derivative at `t` of the parabola through three points.
fn three_point(p: &[(f64, Vec3)], a: usize, b: usize, c: usize, t: f64) -> Vec3 {
    let (ta, tb, tc) = (p[a].0, p[b].0, p[c].0);
    let la = (2.0 * t - tb - tc) / ((ta - tb) * (ta - tc));
    let lb = (2.0 * t - ta - tc) / ((tb - ta) * (tb - tc));
    let lc = (2.0 * t - ta - tb) / ((tc - ta) * (tc - tb));
    p[a].1 * la + p[b].1 * lb + p[c].1 * lc
}

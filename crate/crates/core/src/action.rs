//! The delayed two-body action, its directional derivative and the
//! Euler-Lagrange residual.
//!
//! The integrand for particle 1 couples to particle 2 on both light cones:
//!
//! ```text
//! L = -m1 sqrt(1 - v1²)
//!     + κ (1 - v1·v2+) / (2 r+ (1 + n+·v2+))
//!     + κ (1 - v1·v2-) / (2 r- (1 - n-·v2-))
//! ```
//!
//! with `n± = (x1 - x2±)/r±` and `κ = -q1 q2` (κ = 1 for opposite unit
//! charges). The quadrature mesh is split at breaking points of particle 1
//! and at the pullbacks of particle 2's breaking points through both cones.

use crate::error::{Error, Result};
use crate::lightcone::{cone_time_sided, Branch, ConeSolution};
use crate::quadrature::{integrate_pieces, QuadOptions};
use crate::trajectory::{Perturbation, PiecewiseTrajectory, Side};
use crate::vec3::Vec3;

/// Separations below this are treated as collisions.
pub const COLLISION_CUTOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionWindow {
    pub t_start: f64,
    pub t_end: f64,
}

impl ActionWindow {
    /// A zero-length window is accepted and integrates to nothing.
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start <= t_end) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::Domain(format!("invalid action window [{t_start}, {t_end}]")));
        }
        Ok(Self { t_start, t_end })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }
}

/// Boundary set of the variational problem: the variable windows, the
/// additive constant `k2`, and optional history pieces that extend each
/// particle's known trajectory outside its variable window.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    /// Time of the initial point of particle 1.
    pub start_time: f64,
    /// Time of the endpoint of particle 2.
    pub end_time: f64,
    pub k2: f64,
    pub history1: Option<PiecewiseTrajectory>,
    pub history2: Option<PiecewiseTrajectory>,
}

impl BoundaryData {
    pub fn new(start_time: f64, end_time: f64) -> Self {
        Self {
            start_time,
            end_time,
            k2: 0.0,
            history1: None,
            history2: None,
        }
    }

    /// Trajectory 2 joined with its history, if any.
    pub fn partner_of_1(&self, traj2: &PiecewiseTrajectory) -> Result<PiecewiseTrajectory> {
        join_history(traj2, self.history2.as_ref())
    }

    /// Trajectory 1 joined with its history, if any.
    pub fn partner_of_2(&self, traj1: &PiecewiseTrajectory) -> Result<PiecewiseTrajectory> {
        join_history(traj1, self.history1.as_ref())
    }

    /// Both endpoint light cones must land on known trajectory pieces.
    pub fn check(&self, traj1: &PiecewiseTrajectory, traj2: &PiecewiseTrajectory) -> Result<()> {
        if !self.k2.is_finite() {
            return Err(Error::Domain("k2 must be finite".into()));
        }
        let full1 = self.partner_of_2(traj1)?;
        let full2 = self.partner_of_1(traj2)?;
        let oa = full1.position(self.start_time)?;
        let lb = full2.position(self.end_time)?;
        for branch in [Branch::Retarded, Branch::Advanced] {
            cone_time_sided(&full2, self.start_time, oa, branch, Side::Right)?;
            cone_time_sided(&full1, self.end_time, lb, branch, Side::Right)?;
        }
        Ok(())
    }
}

fn join_history(
    traj: &PiecewiseTrajectory,
    history: Option<&PiecewiseTrajectory>,
) -> Result<PiecewiseTrajectory> {
    let Some(h) = history else {
        return Ok(traj.clone());
    };
    let (a, b) = traj.domain();
    let (ha, hb) = h.domain();
    if hb == a {
        h.concat(traj)
    } else if ha == b {
        traj.concat(h)
    } else if ha <= a && hb >= b {
        h.spliced(traj)
    } else if a <= ha && b >= hb {
        Ok(traj.clone())
    } else {
        Err(Error::Domain(format!(
            "history [{ha}, {hb}] does not abut trajectory [{a}, {b}]"
        )))
    }
}

/// Mass of the varied particle and charge product coefficient κ = -q1 q2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub mass: f64,
    pub kappa: f64,
}

impl Coupling {
    pub fn between(traj1: &PiecewiseTrajectory, traj2: &PiecewiseTrajectory) -> Self {
        Self {
            mass: traj1.particle().mass,
            kappa: -traj1.particle().charge * traj2.particle().charge,
        }
    }
}

/// Value and first partials of the integrand at one point of particle 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianPoint {
    pub value: f64,
    /// Total ∂L/∂x1, including the dependence of the cone times on x1.
    pub dl_dx: Vec3,
    /// ∂L/∂v1, the canonical momentum current.
    pub dl_dv: Vec3,
    /// Time component of the four-momentum current.
    pub energy: f64,
}

/// Both cone solutions of the event `(t1, x1)` on the partner.
pub fn partner_cones(
    partner: &PiecewiseTrajectory,
    t1: f64,
    x1: Vec3,
    side: Side,
) -> Result<(ConeSolution, ConeSolution)> {
    let adv = cone_time_sided(partner, t1, x1, Branch::Advanced, side)?;
    let ret = cone_time_sided(partner, t1, x1, Branch::Retarded, side)?;
    for c in [&adv, &ret] {
        if c.r < COLLISION_CUTOFF {
            return Err(Error::Collision { t: t1, r: c.r });
        }
    }
    Ok((adv, ret))
}

/// Integrand value only.
pub fn interaction_density(
    v1: Vec3,
    adv: &ConeSolution,
    ret: &ConeSolution,
    coupling: Coupling,
    t1: f64,
) -> Result<f64> {
    let x1 = adv.x + adv.n_hat * adv.r;
    Ok(lagrangian_point(x1, v1, adv, ret, coupling, t1)?.value)
}

/// Integrand and its analytic partials from precomputed cone data.
pub fn lagrangian_point(
    x1: Vec3,
    v1: Vec3,
    adv: &ConeSolution,
    ret: &ConeSolution,
    coupling: Coupling,
    t1: f64,
) -> Result<LagrangianPoint> {
    let Coupling { mass, kappa } = coupling;
    let v1sq = v1.norm_sq();
    if v1sq >= 1.0 {
        return Err(Error::Superluminal { t: t1, speed: v1sq.sqrt() });
    }
    let root = (1.0 - v1sq).sqrt();
    let mut out = LagrangianPoint {
        value: -mass * root,
        dl_dx: Vec3::ZERO,
        dl_dv: v1 * (mass / root),
        energy: mass / root,
    };
    for cone in [adv, ret] {
        let s = cone.branch.sign();
        let rho = x1 - cone.x;
        let r = rho.norm();
        if r < COLLISION_CUTOFF {
            return Err(Error::Collision { t: t1, r });
        }
        let n = rho / r;
        let (v2, a2) = (cone.v, cone.a);
        let w = r + s * rho.dot(v2);
        let num = 1.0 - v1.dot(v2);
        let k2w = kappa / (2.0 * w);
        out.value += k2w * num;
        out.dl_dv -= v2 * k2w;
        out.energy -= k2w;
        let d_rho = (n + v2 * s) * (-k2w * num / w);
        let d_v2 = (v1 + rho * (s * num / w)) * (-k2w);
        let d_t2 = -d_rho.dot(v2) + d_v2.dot(a2);
        out.dl_dx += d_rho + rho * (d_t2 * s / w);
    }
    Ok(out)
}

/// Integrand with partials at time `t1` of particle 1, `side` selecting
/// one-sided limits of both the particle and the delayed partner data.
pub fn lagrangian_at(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    t1: f64,
    side: Side,
) -> Result<LagrangianPoint> {
    let (x1, v1, _) = traj1.evaluate_state(t1, side)?;
    let (adv, ret) = partner_cones(partner, t1, x1, side)?;
    lagrangian_point(x1, v1, &adv, &ret, Coupling::between(traj1, partner), t1)
}

/// Times where a cone of particle 1 crosses a breaking point of the partner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pullback {
    pub t1: f64,
    /// Partner breaking time.
    pub l: f64,
    /// Partner cone (seen from particle 1) that hits the breaking point.
    pub branch: Branch,
}

/// Pullbacks of the partner's breaking points into `[lo, hi]`.
pub fn pullback_points(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    lo: f64,
    hi: f64,
) -> Vec<Pullback> {
    let mut out = Vec::new();
    for l in partner.breaks() {
        let Ok(xl) = partner.position(l) else { continue };
        // t2+(t1) = l  <=>  t1 is the retarded time of the partner event.
        for (from, branch) in [(Branch::Retarded, Branch::Advanced), (Branch::Advanced, Branch::Retarded)] {
            if let Ok(c) = cone_time_sided(traj1, l, xl, from, Side::Right) {
                if c.t_k > lo && c.t_k < hi {
                    out.push(Pullback { t1: c.t_k, l, branch });
                }
            }
        }
    }
    out.sort_by(|a, b| a.t1.total_cmp(&b.t1));
    out
}

fn mesh(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    window: ActionWindow,
    extra: &[f64],
) -> (Vec<f64>, Vec<Pullback>) {
    let pulls = pullback_points(traj1, partner, window.t_start, window.t_end);
    let mut cuts: Vec<f64> = std::iter::once(window.t_start)
        .chain(std::iter::once(window.t_end))
        .chain(traj1.breaks().into_iter().filter(|&t| window.contains(t)))
        .chain(pulls.iter().map(|p| p.t1))
        .chain(extra.iter().copied().filter(|&t| window.contains(t)))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    (cuts, pulls)
}

fn quad_options() -> QuadOptions {
    QuadOptions {
        rel_tol: 1e-14,
        abs_tol: 1e-16,
        max_depth: 40,
    }
}

/// `k2 + ∫ L dt1` over the window.
pub fn action(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    window: ActionWindow,
    boundary: &BoundaryData,
) -> Result<f64> {
    let partner = boundary.partner_of_1(traj2)?;
    action_with_partner(traj1, &partner, window, boundary.k2)
}

/// As [`action`] with the partner already joined to its history.
pub fn action_with_partner(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    window: ActionWindow,
    k2: f64,
) -> Result<f64> {
    if window.t_end == window.t_start {
        return Ok(k2);
    }
    let (cuts, _) = mesh(traj1, partner, window, &[]);
    let integral = integrate_pieces(
        |t| Ok(vec![lagrangian_at(traj1, partner, t, Side::Right)?.value]),
        &cuts,
        1,
        quad_options(),
    )?[0];
    Ok(k2 + integral)
}

/// Directional derivative of the action along `b`:
/// `∫ (∂L/∂x1·b + ∂L/∂v1·ḃ) dt1`, plus the contribution of partner breaking
/// points whose pullback times shift under the variation.
pub fn frechet_directional(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    window: ActionWindow,
    boundary: &BoundaryData,
    b: &Perturbation,
) -> Result<f64> {
    let partner = boundary.partner_of_1(traj2)?;
    let (blo, bhi) = b.domain();
    if blo < window.t_start || bhi > window.t_end {
        return Err(Error::Contract(format!(
            "perturbation support [{blo}, {bhi}] exceeds the action window [{}, {}]",
            window.t_start, window.t_end
        )));
    }
    let mut extra = b.breaks();
    extra.extend([blo, bhi]);
    let (cuts, pulls) = mesh(traj1, &partner, window, &extra);
    let inside = |t: f64| t > blo && t < bhi;
    let cuts: Vec<f64> = cuts.into_iter().filter(|&t| t >= blo && t <= bhi).collect();
    let bulk = integrate_pieces(
        |t| {
            let lp = lagrangian_at(traj1, &partner, t, Side::Right)?;
            let (bv, db) = b.value(t, Side::Right)?;
            Ok(vec![lp.dl_dx.dot(bv) + lp.dl_dv.dot(db)])
        },
        &cuts,
        1,
        quad_options(),
    )?[0];
    let mut jumps = 0.0;
    for p in pulls.iter().filter(|p| inside(p.t1)) {
        jumps += pullback_jump(traj1, &partner, p, b)?;
    }
    Ok(bulk + jumps)
}

fn pullback_jump(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    p: &Pullback,
    b: &Perturbation,
) -> Result<f64> {
    let left = lagrangian_at(traj1, partner, p.t1, Side::Left)?;
    let right = lagrangian_at(traj1, partner, p.t1, Side::Right)?;
    let (x1, v1, _) = traj1.evaluate_state(p.t1, Side::Right)?;
    let xl = partner.position(p.l)?;
    let n = (x1 - xl).normalized();
    let s = p.branch.sign();
    let (bv, _) = b.value(p.t1, Side::Right)?;
    let dtau = -s * n.dot(bv) / (1.0 + s * n.dot(v1));
    Ok((left.value - right.value) * dtau)
}

/// Smooth piece of the integrand that contains `t` from `side`.
fn smooth_piece(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    t: f64,
    side: Side,
) -> (f64, f64) {
    let (lo, hi) = traj1.domain();
    let mut cuts: Vec<f64> = traj1.breaks();
    cuts.extend(pullback_points(traj1, partner, lo, hi).iter().map(|p| p.t1));
    let mut a = lo;
    let mut b = hi;
    for c in cuts {
        let below = match side {
            Side::Left => c < t,
            Side::Right => c <= t,
        };
        if below {
            a = a.max(c);
        } else {
            b = b.min(c);
        }
    }
    (a, b)
}

/// `d/dt(∂L/∂v1) - ∂L/∂x1` at `t` with one-sided limits. The time derivative of
/// the momentum current is a fourth-order finite difference that stays inside
/// the smooth piece selected by `side`.
pub fn el_residual(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    t: f64,
    side: Side,
) -> Result<Vec3> {
    el_residual_with_partner(traj1, traj2, t, side)
}

pub fn el_residual_with_partner(
    traj1: &PiecewiseTrajectory,
    partner: &PiecewiseTrajectory,
    t: f64,
    side: Side,
) -> Result<Vec3> {
    let here = lagrangian_at(traj1, partner, t, side)?;
    let seg = &traj1.segments()[traj1.path().segment_index(t, side)?];
    let (lo, hi) = smooth_piece(traj1, partner, t, side);
    let mut h = 1e-4 * (seg.t1 - seg.t0);
    if hi - lo < 8.0 * h {
        h = (hi - lo) / 8.0;
    }
    let p = |tau: f64| -> Result<Vec3> {
        if tau == t {
            Ok(here.dl_dv)
        } else {
            Ok(lagrangian_at(traj1, partner, tau, Side::Right)?.dl_dv)
        }
    };
    let dp = if t - 2.0 * h >= lo && t + 2.0 * h <= hi {
        (p(t - 2.0 * h)? - p(t - h)? * 8.0 + p(t + h)? * 8.0 - p(t + 2.0 * h)?) / (12.0 * h)
    } else if t + 4.0 * h <= hi {
        (p(t)? * -25.0 + p(t + h)? * 48.0 - p(t + 2.0 * h)? * 36.0 + p(t + 3.0 * h)? * 16.0
            - p(t + 4.0 * h)? * 3.0)
            / (12.0 * h)
    } else {
        (p(t)? * 25.0 - p(t - h)? * 48.0 + p(t - 2.0 * h)? * 36.0 - p(t - 3.0 * h)? * 16.0
            + p(t - 4.0 * h)? * 3.0)
            / (12.0 * h)
    };
    Ok(dp - here.dl_dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ParticleParams;
    use approx::assert_abs_diff_eq;

    fn pair(d: f64, span: f64) -> (PiecewiseTrajectory, PiecewiseTrajectory) {
        let p1 = ParticleParams::new(1.0, 1.0).unwrap();
        let p2 = ParticleParams::new(1.0, -1.0).unwrap();
        let x2 = Vec3::new(d, 0.0, 0.0);
        (
            PiecewiseTrajectory::polygonal_from_vertices(&[(-span, Vec3::ZERO), (span, Vec3::ZERO)], p1).unwrap(),
            PiecewiseTrajectory::polygonal_from_vertices(&[(-span, x2), (span, x2)], p2).unwrap(),
        )
    }

    #[test]
    fn static_pair_density() {
        for (d, expected) in [(2.0, -0.5), (1.0, 0.0)] {
            let (t1, t2) = pair(d, 50.0);
            let lp = lagrangian_at(&t1, &t2, 0.0, Side::Right).unwrap();
            assert_abs_diff_eq!(lp.value, expected, epsilon = 1e-14);
        }
        let (t1, t2) = pair(1e9, 1e10);
        let lp = lagrangian_at(&t1, &t2, 0.0, Side::Right).unwrap();
        assert_abs_diff_eq!(lp.value, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn static_pair_action_values() {
        let (t1, t2) = pair(2.0, 50.0);
        let b = BoundaryData::new(0.0, 10.0);
        let s = action(&t1, &t2, ActionWindow::new(0.0, 4.0).unwrap(), &b).unwrap();
        assert_abs_diff_eq!(s, -2.0, epsilon = 1e-12);
        let mut b = BoundaryData::new(0.0, 10.0);
        b.k2 = 0.75;
        let s = action(&t1, &t2, ActionWindow::new(3.0, 3.0).unwrap(), &b).unwrap();
        assert_eq!(s, 0.75);
        let (t1, t2) = pair(1.0, 50.0);
        let s = action(&t1, &t2, ActionWindow::new(0.0, 7.0).unwrap(), &BoundaryData::new(0.0, 10.0)).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn collision_is_an_error() {
        let (t1, t2) = pair(1e-12, 50.0);
        let err = lagrangian_at(&t1, &t2, 0.0, Side::Right).unwrap_err();
        assert!(matches!(err, Error::Collision { .. }));
    }

    #[test]
    fn el_residual_static_pair() {
        for (d, mag) in [(2.0, 0.25), (4.0, 0.0625)] {
            let (t1, t2) = pair(d, 50.0);
            let r = el_residual(&t1, &t2, 0.3, Side::Right).unwrap();
            // residual = -∂L/∂x1 points away from the partner with magnitude 1/d².
            assert_abs_diff_eq!(r.x, -mag, epsilon = 1e-12);
            assert_abs_diff_eq!(r.y.abs() + r.z.abs(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn el_residual_free_uniform_motion() {
        let p1 = ParticleParams::new(1.0, 1.0).unwrap();
        let v = Vec3::new(0.3, -0.2, 0.1);
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(&[(-10.0, v * -10.0), (10.0, v * 10.0)], p1).unwrap();
        let far = Vec3::new(0.0, 1e6, 0.0);
        let t2 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-3e6, far), (3e6, far)],
            ParticleParams::new(1.0, -1.0).unwrap(),
        )
        .unwrap();
        for t in [-5.0, 0.0, 9.9] {
            assert!(el_residual(&t1, &t2, t, Side::Right).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn frechet_null_and_orthogonal() {
        let (t1, t2) = pair(2.0, 50.0);
        let w = ActionWindow::new(0.0, 4.0).unwrap();
        let bd = BoundaryData::new(0.0, 10.0);
        let zero = Perturbation::zero(0.0, 4.0).unwrap();
        assert_eq!(frechet_directional(&t1, &t2, w, &bd, &zero).unwrap(), 0.0);
        let tent = Perturbation::tent(0.0, 2.0, 4.0, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!(frechet_directional(&t1, &t2, w, &bd, &tent).unwrap().abs() < 1e-10);
    }

    #[test]
    fn frechet_tent_matches_finite_difference() {
        let (t1, t2) = pair(2.0, 50.0);
        let w = ActionWindow::new(0.0, 4.0).unwrap();
        let bd = BoundaryData::new(0.0, 10.0);
        let tent = Perturbation::tent(0.0, 1.5, 4.0, Vec3::new(0.2, 0.0, 0.0)).unwrap();
        let analytic = frechet_directional(&t1, &t2, w, &bd, &tent).unwrap();
        let eps = 1e-5;
        let sp = action(&t1.perturbed(&tent, eps).unwrap(), &t2, w, &bd).unwrap();
        let sm = action(&t1.perturbed(&tent, -eps).unwrap(), &t2, w, &bd).unwrap();
        let fd = (sp - sm) / (2.0 * eps);
        assert!((analytic - fd).abs() < 1e-8f64.max(1e-6 * analytic.abs()), "{analytic} vs {fd}");
        assert!(analytic.abs() > 1e-3);
    }

    #[test]
    fn frechet_with_partner_kinks_matches_finite_difference() {
        let p1 = ParticleParams::new(1.0, 1.0).unwrap();
        let p2 = ParticleParams::new(1.3, -0.7).unwrap();
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-40.0, Vec3::new(0.0, 0.0, 0.0)), (1.0, Vec3::new(0.1, 0.05, 0.0)), (40.0, Vec3::new(-0.2, 0.3, 0.1))],
            p1,
        )
        .unwrap();
        let t2 = PiecewiseTrajectory::polygonal_from_vertices(
            &[
                (-40.0, Vec3::new(2.0, 0.0, 0.0)),
                (-1.0, Vec3::new(2.2, 0.3, 0.0)),
                (0.5, Vec3::new(2.5, 0.1, -0.2)),
                (3.5, Vec3::new(2.3, -0.4, 0.0)),
                (40.0, Vec3::new(2.0, 0.0, 0.5)),
            ],
            p2,
        )
        .unwrap();
        let w = ActionWindow::new(-2.0, 6.0).unwrap();
        let bd = BoundaryData::new(-2.0, 10.0);
        assert!(!pullback_points(&t1, &t2, -2.0, 6.0).is_empty());
        for b in [
            Perturbation::tent(-2.0, 1.7, 6.0, Vec3::new(0.3, -0.2, 0.1)).unwrap(),
            Perturbation::bump(-1.0, 5.0, Vec3::new(-0.1, 0.4, 0.2)).unwrap(),
        ] {
            let analytic = frechet_directional(&t1, &t2, w, &bd, &b).unwrap();
            let eps = 1e-5;
            let sp = action(&t1.perturbed(&b, eps).unwrap(), &t2, w, &bd).unwrap();
            let sm = action(&t1.perturbed(&b, -eps).unwrap(), &t2, w, &bd).unwrap();
            let fd = (sp - sm) / (2.0 * eps);
            assert!((analytic - fd).abs() < 1e-8 + 1e-6 * analytic.abs(), "{analytic} vs {fd}");
        }
    }

    #[test]
    fn perturbation_outside_window_is_contract_error() {
        let (t1, t2) = pair(2.0, 50.0);
        let w = ActionWindow::new(0.0, 4.0).unwrap();
        let tent = Perturbation::tent(-1.0, 1.0, 3.0, Vec3::X).unwrap();
        let err = frechet_directional(&t1, &t2, w, &BoundaryData::new(0.0, 10.0), &tent).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn insufficient_history_surfaces() {
        let (t1, _) = pair(2.0, 50.0);
        let p2 = ParticleParams::new(1.0, -1.0).unwrap();
        let short = PiecewiseTrajectory::polygonal_from_vertices(
            &[(0.0, Vec3::new(2.0, 0.0, 0.0)), (4.0, Vec3::new(2.0, 0.0, 0.0))],
            p2,
        )
        .unwrap();
        let err = action(&t1, &short, ActionWindow::new(0.0, 4.0).unwrap(), &BoundaryData::new(0.0, 4.0));
        assert!(matches!(err, Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn history_extends_partner() {
        let (t1, _) = pair(2.0, 50.0);
        let p2 = ParticleParams::new(1.0, -1.0).unwrap();
        let x2 = Vec3::new(2.0, 0.0, 0.0);
        let body = PiecewiseTrajectory::polygonal_from_vertices(&[(0.0, x2), (20.0, x2)], p2).unwrap();
        let hist = PiecewiseTrajectory::polygonal_from_vertices(&[(-20.0, x2), (0.0, x2)], p2).unwrap();
        let mut bd = BoundaryData::new(0.0, 10.0);
        bd.history2 = Some(hist);
        let s = action(&t1, &body, ActionWindow::new(0.0, 4.0).unwrap(), &bd).unwrap();
        assert_abs_diff_eq!(s, -2.0, epsilon = 1e-12);
    }
}

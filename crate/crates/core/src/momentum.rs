//! Momentum and energy currents of particle 1 and their continuity at
//! breaking points.
//!
//! Only the delayed terms depend on the partner; they carry no dependence on
//! v1, so continuity across a velocity jump fixes `m γ v` and `m γ` on the
//! far side from data on the near side.

use serde::{Deserialize, Serialize};

use crate::action::{lagrangian_at, partner_cones, Coupling};
use crate::error::{Error, Result};
use crate::lightcone::ConeSolution;
use crate::trajectory::{PiecewiseTrajectory, Side};
use crate::vec3::Vec3;

/// Above this combined residual a velocity jump is declared infeasible.
pub const INFEASIBLE_JUMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakResidual {
    pub t: f64,
    pub dp: Vec3,
    pub de: f64,
}

impl BreakResidual {
    pub fn magnitude(&self) -> f64 {
        self.dp.max_abs().max(self.de.abs())
    }
}

/// `∂L/∂v1` at `t`, one-sided per `side`.
pub fn momentum_current(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    t: f64,
    side: Side,
) -> Result<Vec3> {
    Ok(lagrangian_at(traj1, traj2, t, side)?.dl_dv)
}

/// `m γ - κ Σ 1/(2w±)` at `t`, one-sided per `side`.
pub fn energy_current(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    t: f64,
    side: Side,
) -> Result<f64> {
    Ok(lagrangian_at(traj1, traj2, t, side)?.energy)
}

/// Jumps of both currents at every breaking point of `traj1`.
pub fn break_residuals(traj1: &PiecewiseTrajectory, traj2: &PiecewiseTrajectory) -> Result<Vec<BreakResidual>> {
    traj1
        .breaks()
        .into_iter()
        .map(|l| {
            let left = lagrangian_at(traj1, traj2, l, Side::Left)?;
            let right = lagrangian_at(traj1, traj2, l, Side::Right)?;
            Ok(BreakResidual {
                t: l,
                dp: right.dl_dv - left.dl_dv,
                de: right.energy - left.energy,
            })
        })
        .collect()
}

/// Delayed sums `(Σ v2/(2w), Σ 1/(2w))` over both cones.
fn delayed_terms(x1: Vec3, cones: [&ConeSolution; 2]) -> (Vec3, f64) {
    let mut a = Vec3::ZERO;
    let mut b = 0.0;
    for c in cones {
        let rho = x1 - c.x;
        let w = rho.norm() + c.branch.sign() * rho.dot(c.v);
        a += c.v / (2.0 * w);
        b += 1.0 / (2.0 * w);
    }
    (a, b)
}

/// Velocity just after `t_break` that keeps both currents continuous, given
/// the velocity `v_pre` just before it. The four conditions are solved in
/// least squares over `u = γ v` by damped Gauss-Newton.
pub fn post_jump_velocity(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    t_break: f64,
    v_pre: Vec3,
) -> Result<Vec3> {
    let speed = v_pre.norm();
    if speed >= 1.0 {
        return Err(Error::Superluminal { t: t_break, speed });
    }
    let Coupling { mass, kappa } = Coupling::between(traj1, traj2);
    let x1 = traj1.position(t_break)?;
    let (adv_l, ret_l) = partner_cones(traj2, t_break, x1, Side::Left)?;
    let (adv_r, ret_r) = partner_cones(traj2, t_break, x1, Side::Right)?;
    let (a_l, b_l) = delayed_terms(x1, [&adv_l, &ret_l]);
    let (a_r, b_r) = delayed_terms(x1, [&adv_r, &ret_r]);
    let gamma_pre = 1.0 / (1.0 - v_pre.norm_sq()).sqrt();
    let p_target = (v_pre * (mass * gamma_pre) + (a_r - a_l) * kappa) / mass;
    let e_target = (mass * gamma_pre + kappa * (b_r - b_l)) / mass;
    let u = solve_gamma_map(p_target, e_target, v_pre * gamma_pre);
    let res = gamma_map_residual(u, p_target, e_target) * mass;
    if !(res < INFEASIBLE_JUMP_TOL) {
        return Err(Error::InfeasibleJump { residual: res });
    }
    let v = u / (1.0 + u.norm_sq()).sqrt();
    let speed = v.norm();
    if speed >= 1.0 {
        return Err(Error::Superluminal { t: t_break, speed });
    }
    Ok(v)
}

fn gamma_map_residual(u: Vec3, p: Vec3, e: f64) -> f64 {
    let dp = u - p;
    let de = (1.0 + u.norm_sq()).sqrt() - e;
    (dp.norm_sq() + de * de).sqrt()
}

/// Minimizes `|u - p|² + (√(1+u²) - e)²`.
fn solve_gamma_map(p: Vec3, e: f64, start: Vec3) -> Vec3 {
    let mut u = start;
    let mut f = gamma_map_residual(u, p, e);
    for _ in 0..200 {
        let g = (1.0 + u.norm_sq()).sqrt();
        let ru = u - p;
        let re = g - e;
        // Jacobian J = [I; uᵀ/g]; normal matrix I + q qᵀ with q = u/g.
        let q = u / g;
        let rhs = ru + q * re;
        // Sherman-Morrison for (I + q qᵀ)⁻¹.
        let step = rhs - q * (q.dot(rhs) / (1.0 + q.norm_sq()));
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-12 {
            let cand = u - step * lambda;
            let fc = gamma_map_residual(cand, p, e);
            if fc < f || (fc == f && step.norm() * lambda == 0.0) {
                u = cand;
                improved = fc < f;
                f = fc;
                break;
            }
            lambda *= 0.5;
        }
        if !improved || step.norm() * lambda <= 1e-16 * u.norm().max(1.0) {
            break;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ParticleParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_pair() -> (ParticleParams, ParticleParams) {
        (ParticleParams::new(1.0, 1.0).unwrap(), ParticleParams::new(1.0, -1.0).unwrap())
    }

    fn static_at(x: Vec3, span: f64, p: ParticleParams) -> PiecewiseTrajectory {
        PiecewiseTrajectory::polygonal_from_vertices(&[(-span, x), (span, x)], p).unwrap()
    }

    fn far_partner() -> PiecewiseTrajectory {
        static_at(Vec3::new(0.0, 1e6, 0.0), 3e6, unit_pair().1)
    }

    #[test]
    fn currents_static_pair() {
        let (p1, p2) = unit_pair();
        let t1 = static_at(Vec3::ZERO, 50.0, p1);
        let t2 = static_at(Vec3::new(2.0, 0.0, 0.0), 50.0, p2);
        assert_eq!(momentum_current(&t1, &t2, 0.0, Side::Right).unwrap(), Vec3::ZERO);
        assert_abs_diff_eq!(energy_current(&t1, &t2, 0.0, Side::Right).unwrap(), 0.5, epsilon = 1e-14);
        let t2 = static_at(Vec3::new(1e9, 0.0, 0.0), 1e10, p2);
        assert_abs_diff_eq!(energy_current(&t1, &t2, 0.0, Side::Right).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn currents_free_particle() {
        let (p1, _) = unit_pair();
        let v = Vec3::new(0.6, 0.0, 0.0);
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(&[(-10.0, v * -10.0), (10.0, v * 10.0)], p1).unwrap();
        let p = momentum_current(&t1, &far_partner(), 1.0, Side::Right).unwrap();
        assert!((p - Vec3::new(0.75, 0.0, 0.0)).max_abs() < 1e-6);
        // The static partner contributes -κ/r on top of γ = 1.25.
        let e = energy_current(&t1, &far_partner(), 1.0, Side::Right).unwrap();
        let r = (Vec3::new(0.6, -1e6, 0.0)).norm();
        assert_abs_diff_eq!(e, 1.25 - 1.0 / r, epsilon = 1e-12);
        assert!((e - 1.25).abs() <= 1.0000001e-6);
    }

    #[test]
    fn free_polygonal_corner_residual() {
        let (p1, _) = unit_pair();
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-10.0, Vec3::new(-6.0, 0.0, 0.0)), (0.0, Vec3::ZERO), (10.0, Vec3::new(0.0, 6.0, 0.0))],
            p1,
        )
        .unwrap();
        let res = break_residuals(&t1, &far_partner()).unwrap();
        assert_eq!(res.len(), 1);
        assert!((res[0].dp - Vec3::new(-0.75, 0.75, 0.0)).max_abs() < 1e-6);
        assert!(res[0].de.abs() < 1e-6);
    }

    #[test]
    fn spurious_break_has_zero_residual() {
        let (p1, p2) = unit_pair();
        let v = Vec3::new(0.2, 0.1, 0.0);
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-20.0, v * -20.0), (0.0, Vec3::ZERO), (20.0, v * 20.0)],
            p1,
        )
        .unwrap();
        let t2 = static_at(Vec3::new(3.0, 0.0, 0.0), 60.0, p2);
        let res = break_residuals(&t1, &t2).unwrap();
        assert!(res[0].magnitude() < 1e-12);
    }

    #[test]
    fn continuous_delayed_terms_keep_velocity() {
        let (p1, p2) = unit_pair();
        let t1 = static_at(Vec3::ZERO, 50.0, p1);
        let t2 = static_at(Vec3::new(2.0, 0.0, 0.0), 50.0, p2);
        for v in [Vec3::new(0.3, 0.0, 0.0), Vec3::ZERO] {
            let out = post_jump_velocity(&t1, &t2, 0.0, v).unwrap();
            assert!((out - v).max_abs() < 1e-12);
        }
    }

    /// Partner at rest at distance 2 starts moving with (0, 0.5, 0) at the
    /// advanced cone time of the break. The advanced term jumps by
    /// κ v2/(2w) = (0, 0.125, 0) and the energy term does not, so the only
    /// feasible jump reverses γv = (0, -0.0625, 0).
    fn jumping_partner() -> (PiecewiseTrajectory, PiecewiseTrajectory, Vec3) {
        let (p1, p2) = unit_pair();
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-50.0, Vec3::ZERO), (0.0, Vec3::ZERO), (50.0, Vec3::ZERO)],
            p1,
        )
        .unwrap();
        let x2 = Vec3::new(2.0, 0.0, 0.0);
        let t2 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-50.0, x2), (2.0, x2), (50.0, x2 + Vec3::new(0.0, 24.0, 0.0))],
            p2,
        )
        .unwrap();
        let u = 0.0625;
        let v = u / (1.0f64 + u * u).sqrt();
        (t1, t2, Vec3::new(0.0, -v, 0.0))
    }

    #[test]
    fn constructed_feasible_jump() {
        let (t1, t2, v_pre) = jumping_partner();
        let v_post = post_jump_velocity(&t1, &t2, 0.0, v_pre).unwrap();
        assert!((v_post + v_pre).max_abs() < 1e-12);
        // Substitute into a trajectory with that corner and recheck continuity.
        let t1 = PiecewiseTrajectory::polygonal_from_vertices(
            &[(-1.0, v_pre * -1.0), (0.0, Vec3::ZERO), (1.0, v_post)],
            t1.particle(),
        )
        .unwrap();
        let res = break_residuals(&t1, &t2).unwrap();
        assert!(res[0].magnitude() < 1e-10, "{:?}", res[0]);
    }

    #[test]
    fn infeasible_jump_is_reported() {
        let (t1, t2, _) = jumping_partner();
        let err = post_jump_velocity(&t1, &t2, 0.0, Vec3::new(0.0, 0.3, 0.0)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleJump { .. }));
        let err = post_jump_velocity(&t1, &t2, 0.0, Vec3::new(1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Superluminal { .. }));
    }

    fn velocity() -> impl Strategy<Value = Vec3> {
        (-0.55f64..0.55, -0.55f64..0.55, -0.55f64..0.55).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gamma_map_is_injective(v in velocity(), d in 1.5f64..20.0) {
            let (p1, p2) = unit_pair();
            let t1 = static_at(Vec3::ZERO, 100.0, p1);
            let t2 = static_at(Vec3::new(0.0, 0.0, d), 100.0, p2);
            let out = post_jump_velocity(&t1, &t2, 0.0, v).unwrap();
            prop_assert!((out - v).max_abs() < 1e-12);
        }

        #[test]
        fn solved_jump_has_continuous_currents(ux in -0.6f64..0.6, uz in -0.6f64..0.6) {
            // Feasible set of the jumping partner: u_y = -0.0625, free u_x, u_z.
            let (t1, t2, _) = jumping_partner();
            let u = Vec3::new(ux, -0.0625, uz);
            let v = u / (1.0 + u.norm_sq()).sqrt();
            let v_post = post_jump_velocity(&t1, &t2, 0.0, v).unwrap();
            let t1 = PiecewiseTrajectory::polygonal_from_vertices(
                &[(-1.0, v * -1.0), (0.0, Vec3::ZERO), (1.0, v_post)],
                t1.particle(),
            ).unwrap();
            let res = break_residuals(&t1, &t2).unwrap();
            prop_assert!(res[0].magnitude() < 1e-10);
        }
    }
}

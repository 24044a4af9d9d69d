//! Advanced/retarded light-cone conditions and their far-field limit.
//!
//! For a subluminal trajectory the cone function `g(τ) = τ - t ± |x - X(τ)|`
//! is strictly increasing, so every solve is a bracketed monotone root find:
//! the bracket is grown geometrically from the event time and then closed by
//! Newton steps with a bisection fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{PiecewiseTrajectory, Segment, Side};
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Retarded,
    Advanced,
}

impl Branch {
    /// +1 for advanced, -1 for retarded.
    pub fn sign(self) -> f64 {
        match self {
            Branch::Retarded => -1.0,
            Branch::Advanced => 1.0,
        }
    }
}

/// Solved light-cone data on the source trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSolution {
    /// Delayed (retarded) or advanced time on the source.
    pub t_k: f64,
    pub r: f64,
    /// Unit vector from the source position to the event.
    pub n_hat: Vec3,
    pub x: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    /// dt_k/dt at fixed event position.
    pub dilation: f64,
    pub side: Side,
    pub branch: Branch,
}

/// Cone times closer than this to a breaking point are attributed to the
/// requested side of that breaking point.
pub const SNAP_TOL: f64 = 1e-11;

/// Absolute cone residual target, scaled by max(1, |t|, |τ|, r).
pub const CONE_TOL: f64 = 1e-12;

const MAX_ITER: usize = 200;

/// Light-cone time of `event = (t, x)` on `traj`; junction hits use `Side::Right`.
pub fn cone_time(traj: &PiecewiseTrajectory, t: f64, x: Vec3, branch: Branch) -> Result<ConeSolution> {
    cone_time_sided(traj, t, x, branch, Side::Right)
}

/// As [`cone_time`], selecting `side` when the cone time falls on a breaking point.
pub fn cone_time_sided(
    traj: &PiecewiseTrajectory,
    t: f64,
    x: Vec3,
    branch: Branch,
    side: Side,
) -> Result<ConeSolution> {
    let s = branch.sign();
    // Increasing in τ: g' = 1 + s n.v with n = (x - X)/r.
    let cone_g = |seg: &Segment, tau: f64| {
        let (xs, v, _) = seg.state(tau);
        let d = x - xs;
        let r = d.norm();
        let nv = if r > 0.0 { d.dot(v) / r } else { 0.0 };
        (tau - t - s * r, 1.0 + s * nv)
    };
    let (lo, hi) = traj.domain();
    let start = t.clamp(lo, hi);
    let tau = solve_increasing(traj, t, start, |seg, tau| cone_g(seg, tau))?;
    let (tau, seg_idx, used_side) = snap_to_break(traj, tau, side, |seg, tau| cone_g(seg, tau))?;
    let seg = &traj.segments()[seg_idx];
    let (xs, v, a) = seg.state(tau);
    let d = x - xs;
    let r = d.norm();
    if r < 1e-300 {
        return Err(Error::Collision { t, r });
    }
    let n_hat = d / r;
    let residual = (tau - t - s * r).abs();
    if residual > CONE_TOL * t.abs().max(tau.abs()).max(r).max(1.0) {
        return Err(Error::Convergence {
            what: "light-cone root",
            iterations: MAX_ITER,
            residual,
        });
    }
    Ok(ConeSolution {
        t_k: tau,
        r,
        n_hat,
        x: xs,
        v,
        a,
        dilation: 1.0 / (1.0 + s * n_hat.dot(v)),
        side: used_side,
        branch,
    })
}

/// Far-zone cone time on a sphere of radius `big_r` in direction `n`:
/// solves `t_k = t - R + n.x(t_k)` (retarded).
pub fn far_cone_time(traj: &PiecewiseTrajectory, t: f64, n: Vec3, big_r: f64) -> Result<f64> {
    Ok(far_cone(traj, t, n, big_r, Branch::Retarded, Side::Right)?.t_k)
}

/// Far-zone cone with full kinematic data. The advanced branch solves
/// `t_k = t + R - n.x(t_k)`.
pub fn far_cone(
    traj: &PiecewiseTrajectory,
    t: f64,
    n: Vec3,
    big_r: f64,
    branch: Branch,
    side: Side,
) -> Result<ConeSolution> {
    let s = branch.sign();
    // Retarded: g = τ - t + R - n.X ; advanced: g = τ - t - R + n.X. g' = 1 + s n.v.
    let far_g = |seg: &Segment, tau: f64| {
        let (xs, v, _) = seg.state(tau);
        (tau - t - s * big_r + s * n.dot(xs), 1.0 + s * n.dot(v))
    };
    let (lo, hi) = traj.domain();
    let start = (t + s * big_r).clamp(lo, hi);
    let tau = solve_increasing(traj, t, start, |seg, tau| far_g(seg, tau))?;
    let (tau, seg_idx, used_side) = snap_to_break(traj, tau, side, |seg, tau| far_g(seg, tau))?;
    let seg = &traj.segments()[seg_idx];
    let (xs, v, a) = seg.state(tau);
    let residual = far_g(seg, tau).0.abs();
    let scale = t.abs().max(big_r.abs()).max(1.0);
    if residual > CONE_TOL * scale {
        return Err(Error::Convergence {
            what: "far-field cone root",
            iterations: MAX_ITER,
            residual,
        });
    }
    Ok(ConeSolution {
        t_k: tau,
        r: big_r,
        n_hat: n,
        x: xs,
        v,
        a,
        dilation: 1.0 / (1.0 + s * n.dot(v)),
        side: used_side,
        branch,
    })
}

/// Retarded and advanced cone times of the event `(t2, x2(t2))` on `traj1`.
pub fn influence_interval(
    traj1: &PiecewiseTrajectory,
    traj2: &PiecewiseTrajectory,
    t2: f64,
) -> Result<(f64, f64)> {
    let x2 = traj2.position(t2)?;
    let lo = cone_time(traj1, t2, x2, Branch::Retarded)?.t_k;
    let hi = cone_time(traj1, t2, x2, Branch::Advanced)?.t_k;
    Ok((lo, hi))
}

/// Root of a strictly increasing piecewise function `g`, evaluated on the
/// segment that owns each trial point.
fn solve_increasing<G>(traj: &PiecewiseTrajectory, t_event: f64, start: f64, g: G) -> Result<f64>
where
    G: Fn(&Segment, f64) -> (f64, f64),
{
    let (dom_lo, dom_hi) = traj.domain();
    let segs = traj.segments();
    let eval = |tau: f64| -> Result<(f64, f64)> {
        let i = traj.path().segment_index(tau, Side::Right)?;
        Ok(g(&segs[i], tau))
    };
    let insufficient = || Error::InsufficientHistory {
        t: t_event,
        lo: dom_lo,
        hi: dom_hi,
    };

    let (g0, _) = eval(start)?;
    if g0 == 0.0 {
        return Ok(start);
    }
    // Grow a bracket [lo, hi] with g(lo) < 0 < g(hi).
    let (mut lo, mut hi);
    let mut step = g0.abs().max(1e-9 * start.abs().max(1.0));
    if g0 < 0.0 {
        lo = start;
        loop {
            let cand = lo + step;
            if cand >= dom_hi {
                if eval(dom_hi)?.0 < 0.0 {
                    return Err(insufficient());
                }
                hi = dom_hi;
                break;
            }
            if eval(cand)?.0 >= 0.0 {
                hi = cand;
                break;
            }
            lo = cand;
            step *= 2.0;
        }
    } else {
        hi = start;
        loop {
            let cand = hi - step;
            if cand <= dom_lo {
                if eval(dom_lo)?.0 > 0.0 {
                    return Err(insufficient());
                }
                lo = dom_lo;
                break;
            }
            if eval(cand)?.0 <= 0.0 {
                lo = cand;
                break;
            }
            hi = cand;
            step *= 2.0;
        }
    }

    let mut tau = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let (gv, dg) = eval(tau)?;
        if gv == 0.0 {
            return Ok(tau);
        }
        if gv < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let mut next = tau - gv / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let tol = 4.0 * f64::EPSILON * tau.abs().max(1.0);
        if (next - tau).abs() <= tol || hi - lo <= tol {
            return Ok(next);
        }
        tau = next;
    }
    Err(Error::Convergence {
        what: "light-cone bracket",
        iterations: MAX_ITER,
        residual: hi - lo,
    })
}

/// Picks the segment on `side` of a breaking point within [`SNAP_TOL`] of
/// `tau` and re-polishes the root on that segment's polynomial.
fn snap_to_break<G>(traj: &PiecewiseTrajectory, tau: f64, side: Side, g: G) -> Result<(f64, usize, Side)>
where
    G: Fn(&Segment, f64) -> (f64, f64),
{
    let segs = traj.segments();
    let near = segs
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, s)| (s.t0 - tau).abs() <= SNAP_TOL * s.t0.abs().max(1.0));
    let Some((j, seg_r)) = near else {
        return Ok((tau, traj.path().segment_index(tau, side)?, side));
    };
    let idx = match side {
        Side::Left => j - 1,
        Side::Right => j,
    };
    let seg = &segs[idx];
    let mut t = tau;
    for _ in 0..8 {
        let (gv, dg) = g(seg, t);
        let next = t - gv / dg;
        if (next - t).abs() <= 2.0 * f64::EPSILON * t.abs().max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    // A polished root on the wrong side of the junction is the same event to
    // rounding; keep it on the junction itself when it stays within tolerance.
    if (t - seg_r.t0).abs() > SNAP_TOL * seg_r.t0.abs().max(1.0) {
        t = tau;
    }
    Ok((t, idx, side))
}

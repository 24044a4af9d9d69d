//! Numerical toolkit for the boundary-value variational formulation of
//! two-body action-at-a-distance electrodynamics with piecewise-smooth
//! trajectories.
//!
//! Natural units throughout (c = 1). The modules build on each other:
//! [`trajectory`] holds the piecewise paths, [`lightcone`] resolves the
//! delayed couplings, [`action`] and [`momentum`] evaluate the variational
//! quantities, [`farfield`] the radiation fields, [`shortrange`] the
//! vanishing-far-field orbit family, and [`optimizer`] the discretized
//! boundary-value minimizer.

// `!(x < y)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod cli;
pub mod error;
pub mod farfield;
pub mod lightcone;
pub mod momentum;
pub mod optimizer;
pub mod quadrature;
pub mod shortrange;
pub mod trajectory;
pub mod vec3;

pub use error::{Error, Result};
pub use lightcone::{Branch, ConeSolution};
pub use trajectory::{ParticleParams, Perturbation, PiecewiseTrajectory, Segment, Side};
pub use vec3::Vec3;

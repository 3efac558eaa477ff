//! Self-calibration toolkit for the foot force sensors of a simulated
//! quasi-static humanoid.
//!
//! The crate covers the full loop: sampling double-support stances,
//! planning whole-body trajectories whose modeled center of pressure
//! sweeps the sensing polygon, simulating load-cell voltages with a
//! synthetic ground truth, and identifying the per-cell affine sensor
//! parameters by nonlinear least squares against modeled references.
//! A grid-weight manual-calibration pipeline provides the high-accuracy
//! baseline the self-calibration is judged against.
//!
//! Modules:
//! - [`numopt`] — damped Gauss-Newton least squares, penalty-method NLP,
//!   finite differences.
//! - [`model`] — kinematic biped model: forward kinematics, CoM/CoP,
//!   capsule collision geometry, sensing polygons.
//! - [`sensors`] — load-cell measurement model and the synthetic sensor
//!   simulator.
//! - [`manual_cal`] — grid-weight manual calibration and MAE metrics.
//! - [`sampler`] — double-support configuration sampling.
//! - [`planner`] — CoP-landmark trajectory optimization and certification.
//! - [`selfcal`] — initial guess regression, parameter identification,
//!   double-support CoP correction.
//! - [`cli`] — pipeline stages, artifact files, reporting.

pub mod cli;
pub mod manual_cal;
pub mod model;
pub mod numopt;
pub mod planner;
pub mod rng;
pub mod sampler;
pub mod selfcal;
pub mod sensors;

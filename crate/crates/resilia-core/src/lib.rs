//! Resilient constrained optimal control.
//!
//! This crate solves convex control problems whose constraints are perturbed
//! by a random disturbance. Three formulations are supported on a shared
//! problem representation:
//!
//! * **robust**: enforce constraints with a margin so that they hold with
//!   probability at least `1 - delta` ([`robust`]),
//! * **worst case**: enforce constraints at every disturbance scenario,
//! * **resilient**: allow per-scenario constraint violations `s(xi) >= 0`,
//!   priced by a violation cost, and optimize the compromise jointly
//!   ([`resilient`]).
//!
//! The resilient formulation exposes its dual structure: optimal violations
//! satisfy a fixed-point relation with the constraint multipliers scaled by
//! the disturbance density, and the multipliers measure the sensitivity of
//! the optimal cost to the allowed violation ([`duality`]).
//!
//! Discrete-time LQR planning problems, including scenario branching after a
//! mid-horizon disruption, lower onto the same representation ([`lqr`]), with
//! a linearized quadrotor as the concrete plant ([`quadrotor`]). End-to-end
//! studies live in [`experiments`].

pub mod duality;
pub mod error;
pub mod experiments;
pub mod lqr;
pub mod problem;
pub mod quadrotor;
pub mod resilient;
pub mod robust;
pub mod sampler;
pub mod scenario;
mod solver;

pub use duality::{DualMap, KktResidual, SlackMap, SolveReport, SolveStatus};
pub use error::{Error, Result};
pub use problem::{AffineCoeffs, Constraint, Objective, ProblemSpec};
pub use resilient::{SaddleState, ViolationCost};
pub use robust::RobustConfig;
pub use sampler::DisturbanceSampler;
pub use scenario::ScenarioSet;

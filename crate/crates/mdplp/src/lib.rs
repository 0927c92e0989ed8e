//! Finite convex approximations of average-cost and discounted-cost Markov
//! decision processes on continuous state-action spaces.
//!
//! The pipeline restricts the value function to a normalized Fourier
//! subspace, then closes the remaining semi-infinite constraint system by
//! one of two routes:
//!
//! * a **scenario program** over uniformly sampled state-action pairs, with
//!   probabilistic sample-size requirements and posterior tail-bound
//!   certificates ([`scenario`], [`bounds`]);
//! * an **entropy-smoothed fast-gradient method** on the dual, with
//!   deterministic lower/upper value bounds after any iteration count
//!   ([`smoothing`]).
//!
//! [`problems`] ships the two benchmark models (truncated LQG, Ricker
//! fisheries); [`harness`] drives multi-trial sweeps and emits the CSV/JSON
//! artifacts behind the `mdplp` command-line tool.

pub mod basis;
pub mod bounds;
pub mod harness;
pub mod model;
pub mod problems;
pub mod quadrature;
pub mod scenario;
pub mod smoothing;

pub use basis::{fourier_basis, BasisSet};
pub use bounds::{BoundsReport, Route};
pub use model::{to_unit_box, ControlModel, Criterion};
pub use problems::{fisheries_instance, lqg_instance, FisheriesParams, LqgParams};
pub use scenario::{assemble, sample_uniform, solve, ScenarioProgram, ScenarioSolution};
pub use smoothing::{prox_t, run_algorithm1, SmoothingContext, SmoothingRun};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Adaptive time-stepping solvers for stochastic differential equations with
//! piecewise continuous arguments (SDEPCAs):
//!
//! ```text
//! dx(t) = f(x(t), x([t])) dt + sum_j g_j(x(t), x([t])) dB^j(t),   x(0) = x0,
//! ```
//!
//! where `[t]` is the floor function, so the coefficients see both the current
//! state and the state frozen at the most recent integer time. The drift may
//! grow superlinearly; stability of the explicit schemes comes from a
//! state-dependent maximum step `Δ(x)` divided by a refinement parameter `M`.
//!
//! The crate provides:
//!
//! - [`problem`]: the problem class, three built-in example systems, and
//!   numerical validators for the coefficient assumptions;
//! - [`noise`]: seeded Brownian master paths on a dyadic tick grid, with
//!   coupled increments and iterated integrals (Lévy areas) over arbitrary
//!   tick-aligned intervals;
//! - [`stepper`]: the adaptive step controller and the solvers — adaptive
//!   Milstein/Euler, tamed Milstein, uniform explicit Milstein, and
//!   drift-implicit backward Euler/Milstein references;
//! - [`montecarlo`]: coupled-path Monte Carlo experiments measuring strong
//!   `L^p` errors against a fine-step reference on the same Brownian path,
//!   with convergence-order fitting.
//!
//! The library core is `no_std`-compatible (`alloc` required, float math via
//! `libm` when `std` is disabled); experiment parallelism is only available
//! with `std`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("no_std builds require the `libm` feature for float math");

mod error;
mod math;
mod rng;

pub mod grid;
pub mod montecarlo;
pub mod noise;
pub mod problem;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::TickGrid;
pub use montecarlo::{
    fit_order, run_experiment, step_count_scaling, Candidate, CandidateParam, CandidateResult,
    ErrorTable, ExperimentPlan, OrderFit, ReferenceSpec, SolverOrders,
};
pub use noise::{bundle, increment_moments, sample_master, IncrementBundle, MasterNoise};
pub use problem::{
    make_example, AssumptionCertificate, Domain, ExampleStepParams, SdepcaProblem, StepFn,
};
pub use stepper::{
    backward_step, euler_step, milstein_step, next_step, run_path, tamed_drift,
    tamed_milstein_step, NewtonParams, PathRecord, RunOptions, Solver, StepPolicy,
};

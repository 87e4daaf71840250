//! Beam-domain energy-efficiency power allocation for the multi-user massive
//! MIMO downlink, driven only by channel statistics (per-user eigenmode
//! coupling matrices).
//!
//! The solver pipeline:
//!
//! 1. an outer linearization loop that replaces the nonconcave part of the
//!    rate by its first-order expansion ([`solver`]),
//! 2. a fractional-programming (Dinkelbach) transform of the resulting
//!    concave-over-affine ratio ([`wf`], [`solver`]),
//! 3. deterministic-equivalent rates so no expectation has to be sampled in
//!    the loop ([`de`]),
//! 4. per-beam water-filling with safeguarded Newton roots for the
//!    parametric subproblems ([`wf`]).
//!
//! Monte-Carlo estimators ([`mc`]), a projected-gradient solver and a grid
//! oracle ([`oracle`]) provide independent verification, and [`synth`]
//! generates reproducible synthetic scenarios.

pub mod de;
pub mod mc;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod solver;
pub mod synth;
pub mod wf;

pub use model::{
    dbm_to_watts, validate, watts_to_dbm, ChannelStats, DeRefresh, Mat, PowerAllocation,
    PowerModel, SolverConfig, UserStats, ValidationError,
};
pub use solver::{
    auxiliary_power_curve, de_ee, de_sum_rate, solve_ee_lowcomplexity, solve_ee_reference,
    solve_sumrate, Branch, SolveError, SolveTrace,
};

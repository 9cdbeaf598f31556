//! Crossing statistics of weighted Markov branching processes.
//!
//! From state `i >= 1` the process jumps to `i + j - 1` at rate
//! `w_i * b_j`; state 0 absorbs. For a chosen finite set of jump indices,
//! this crate computes the exact joint distribution of the tallied jump
//! counts at extinction, conditioned on extinction, by solving a truncated
//! power-series recursion — and cross-checks every exact quantity against
//! a Monte Carlo simulation of the embedded jump chain.
//!
//! The pieces, bottom up:
//!
//! - [`law`]: the rate sequence, crossing set, validation, and the
//!   generating functions everything else evaluates.
//! - [`roots`]: minimal nonnegative roots on `[0, 1]`; the root of the full
//!   rate function is the extinction probability.
//! - [`series`]: truncated multivariate series arithmetic and the
//!   coefficient recursions (general solver, death and up-crossing fast
//!   paths, and an independent oracle for the cubic family).
//! - [`dist`]: conditional crossing-count distributions, marginals, and
//!   partial-sum moments with convergence diagnostics.
//! - [`mc`]: embedded-chain simulation, empirical estimates, and z-score
//!   comparison gates.
//! - [`rng`]: counter-based random streams so parallel and serial runs
//!   agree bit for bit.
//!
//! Values are immutable once built and all computations are pure; anything
//! here can be shared across threads freely.

pub mod dist;
pub mod law;
pub mod mc;
pub mod rng;
pub mod roots;
pub mod series;

pub use dist::{conditional_distribution, moments, CrossingDistribution, DistError, MomentReport};
pub use law::{
    validate, validate_law, BranchingLaw, CrossingSet, Diagnostic, InvalidModel, LawError,
    ModelFile, ValidationReport, Violation,
};
pub use mc::{
    compare, estimate_distribution, jump_kernel, simulate_path, simulate_timed_path,
    survival_divergence_check, Caps, CellComparison, ComparisonReport, EmpiricalDistribution,
    McError, PathOutcome, SurvivalReport, WeightRule,
};
pub use roots::{min_root, min_root_at, RootError, RootResult};
pub use series::{
    convolution_power, crossing_series, cubic_death_series, death_series, upcross_series,
    MultiIndex, SeriesError, TruncatedSeries,
};

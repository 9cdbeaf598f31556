//! Conditional crossing-count distributions, marginals, and moments.
//!
//! Conditioned on extinction, the joint law of the tracked jump counts from
//! initial state `i` has probability `rho^{-i}` times the `i`-fold
//! convolution of the crossing series at each index. Only the
//! conditional-on-extinction law is tabulated: on survival the counts are
//! almost surely infinite, so there is nothing finite to report.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::law::{validate, BranchingLaw, CrossingSet, InvalidModel};
use crate::roots::{min_root, RootError};
use crate::series::{convolution_power, crossing_series, MultiIndex, SeriesError};

/// Tail mass and mean-increment threshold for declaring moments converged.
pub const CONVERGENCE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Error)]
pub enum DistError {
    #[error(transparent)]
    Invalid(#[from] InvalidModel),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("initial state must be at least 1")]
    InitialStateZero,
    #[error("component {component} is not in the crossing set")]
    ComponentNotInSet { component: usize },
    #[error("extinction probability computed as zero; no conditioning possible")]
    ExtinctionImpossible,
}

/// Joint distribution of the tracked crossing counts at extinction,
/// conditioned on extinction, truncated at total degree `truncation`.
#[derive(Clone, Debug)]
pub struct CrossingDistribution {
    set: CrossingSet,
    initial_state: u64,
    truncation: u32,
    rho: f64,
    probs: BTreeMap<MultiIndex, f64>,
    captured_mass: f64,
    conditional: bool,
}

impl CrossingDistribution {
    pub fn set(&self) -> &CrossingSet {
        &self.set
    }

    pub fn initial_state(&self) -> u64 {
        self.initial_state
    }

    pub fn truncation(&self) -> u32 {
        self.truncation
    }

    /// Extinction probability from state 1.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Always true: only conditional-on-extinction laws are emitted.
    pub fn conditional(&self) -> bool {
        self.conditional
    }

    pub fn probability(&self, index: &MultiIndex) -> f64 {
        self.probs.get(index).copied().unwrap_or(0.0)
    }

    /// Stored cells in degree-then-lex order.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.probs.iter().map(|(i, &v)| (i, v))
    }

    pub fn num_cells(&self) -> usize {
        self.probs.len()
    }

    /// Total probability captured by the truncation; at most 1 and
    /// nondecreasing in the truncation order.
    pub fn captured_mass(&self) -> f64 {
        self.captured_mass
    }

    /// Sums out every component except the one tracking `component`,
    /// returning a dense table indexed by count.
    pub fn marginal(&self, component: usize) -> Result<Vec<f64>, DistError> {
        let position = self
            .set
            .position(component)
            .ok_or(DistError::ComponentNotInSet { component })?;
        let mut table = vec![0.0; self.truncation as usize + 1];
        for (index, value) in self.iter() {
            table[index.get(position) as usize] += value;
        }
        Ok(table)
    }
}

/// Partial-sum moments of one marginal, with convergence diagnostics.
/// When `converged` is false the mean and variance are lower bounds of a
/// possibly divergent sum, not estimates.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub component: usize,
    pub truncation: u32,
    pub rho: f64,
    /// True when the mean/variance are conditional-on-extinction quantities
    /// (extinction probability below 1) rather than plain moments.
    pub conditional: bool,
    pub mean: f64,
    pub variance: f64,
    pub tail_mass: f64,
    pub converged: bool,
}

/// Joint conditional distribution from initial state `initial_state`.
pub fn conditional_distribution(
    law: &BranchingLaw,
    set: &CrossingSet,
    initial_state: u64,
    truncation: u32,
) -> Result<CrossingDistribution, DistError> {
    validate(law, set).into_result()?;
    if initial_state == 0 {
        return Err(DistError::InitialStateZero);
    }
    let rho = min_root(law)?.value;
    if rho <= 0.0 {
        return Err(DistError::ExtinctionImpossible);
    }
    let series = crossing_series(law, set, truncation)?;
    let powered = if initial_state == 1 {
        series
    } else {
        convolution_power(&series, initial_state as u32)
    };
    let normalizer = rho.powi(initial_state as i32);
    let mut probs = BTreeMap::new();
    let mut captured_mass = 0.0;
    for (index, value) in powered.iter() {
        let p = value / normalizer;
        if p != 0.0 {
            captured_mass += p;
            probs.insert(index.clone(), p);
        }
    }
    Ok(CrossingDistribution {
        set: set.clone(),
        initial_state,
        truncation,
        rho,
        probs,
        captured_mass,
        conditional: true,
    })
}

/// Mean and variance of the `component` marginal from initial state 1,
/// computed as partial sums over the truncation with an explicit
/// convergence flag instead of a closed form.
pub fn moments(
    law: &BranchingLaw,
    set: &CrossingSet,
    component: usize,
    truncation: u32,
) -> Result<MomentReport, DistError> {
    let dist = conditional_distribution(law, set, 1, truncation)?;
    let marginal = dist.marginal(component)?;

    let mut mean = 0.0;
    let mut second = 0.0;
    // Mean accumulated over all but the last tenth of the degrees, to
    // measure how much the final stretch still contributes.
    let cutoff = (truncation as usize * 9) / 10;
    let mut mean_at_cutoff = 0.0;
    for (n, p) in marginal.iter().enumerate() {
        let n_f = n as f64;
        mean += n_f * p;
        second += n_f * n_f * p;
        if n == cutoff {
            mean_at_cutoff = mean;
        }
    }
    let tail_mass = 1.0 - dist.captured_mass();
    let last_decade_increment = mean - mean_at_cutoff;
    let converged = tail_mass < CONVERGENCE_TOL && last_decade_increment < CONVERGENCE_TOL;
    Ok(MomentReport {
        component,
        truncation,
        rho: dist.rho(),
        conditional: dist.rho() < 1.0 - 1e-9,
        mean,
        variance: second - mean * mean,
        tail_mass,
        converged,
    })
}

//! Branching laws, crossing sets, and their generating functions.
//!
//! A branching law is the finite rate sequence `b_j`: from state `i >= 1`
//! the process jumps to `i + j - 1` at rate `w_i * b_j`, so `b_0` is the
//! death rate, `b_1 < 0` carries the total outflow, and `b_j` for `j >= 2`
//! are the offspring rates. A [`CrossingSet`] picks out which jump indices
//! are tallied jointly until extinction.
//!
//! Everything downstream works with the rate generating function
//! `B(u) = sum_j b_j u^j` and its split into tracked / untracked parts, so
//! those evaluations live here next to the data they read.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack allowed on the conservation identity `-b_1 = sum_{j != 1} b_j`.
pub const CONSERVATION_REL_TOL: f64 = 1e-12;

/// Finite-support rate sequence with optional per-state weights.
///
/// Weights rescale holding times only; every distributional quantity in this
/// crate ignores them, and the timed simulator is the one consumer.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchingLaw {
    rates: BTreeMap<usize, f64>,
    weights: Option<BTreeMap<u64, f64>>,
}

impl BranchingLaw {
    /// Builds a law from a sparse rate table. No invariants are checked here;
    /// run [`validate_law`] (or [`validate`] with a crossing set) before use.
    pub fn from_rates(rates: BTreeMap<usize, f64>) -> Self {
        Self {
            rates,
            weights: None,
        }
    }

    /// Convenience constructor from `(index, rate)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self::from_rates(pairs.into_iter().collect())
    }

    /// Attaches an explicit weight table `i -> w_i`.
    pub fn with_weights(mut self, weights: BTreeMap<u64, f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    /// Rate `b_j`; absent indices are zero.
    pub fn rate(&self, j: usize) -> f64 {
        self.rates.get(&j).copied().unwrap_or(0.0)
    }

    /// Nonzero entries of the rate table in index order.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rates
            .iter()
            .filter(|(_, &b)| b != 0.0)
            .map(|(&j, &b)| (j, b))
    }

    /// Largest index with a nonzero rate.
    pub fn max_index(&self) -> usize {
        self.support().map(|(j, _)| j).max().unwrap_or(0)
    }

    /// Total jump rate `-b_1`.
    pub fn total_rate(&self) -> f64 {
        -self.rate(1)
    }

    pub fn weights(&self) -> Option<&BTreeMap<u64, f64>> {
        self.weights.as_ref()
    }

    /// Mean offspring production rate `sum_{j >= 1} j * b_{j+1}`.
    pub fn birth_rate(&self) -> f64 {
        self.support()
            .filter(|&(j, _)| j >= 2)
            .map(|(j, b)| (j - 1) as f64 * b)
            .sum()
    }

    /// `B'(1) = sum_j j * b_j`. Negative means subcritical (extinction is
    /// certain), zero critical, positive supercritical.
    pub fn criticality(&self) -> f64 {
        self.support().map(|(j, b)| j as f64 * b).sum()
    }

    /// `B(u) = sum_j b_j u^j`, exact over the finite support.
    pub fn eval(&self, u: f64) -> f64 {
        self.support().map(|(j, b)| b * u.powi(j as i32)).sum()
    }

    /// `B'(u)`.
    pub fn eval_deriv(&self, u: f64) -> f64 {
        self.support()
            .filter(|&(j, _)| j >= 1)
            .map(|(j, b)| j as f64 * b * u.powi(j as i32 - 1))
            .sum()
    }

    /// `B''(u)`. Every term has a nonnegative coefficient except the absent
    /// `j = 1` one, so this is nonnegative on `[0, 1]` for a valid law.
    pub fn eval_second_deriv(&self, u: f64) -> f64 {
        self.support()
            .filter(|&(j, _)| j >= 2)
            .map(|(j, b)| (j * (j - 1)) as f64 * b * u.powi(j as i32 - 2))
            .sum()
    }

    /// Untracked part: sum of `b_j u^j` over indices outside the set.
    pub fn eval_untracked(&self, set: &CrossingSet, u: f64) -> f64 {
        self.support()
            .filter(|&(j, _)| !set.contains(j))
            .map(|(j, b)| b * u.powi(j as i32))
            .sum()
    }

    /// u-derivative of the untracked part.
    pub fn eval_untracked_deriv(&self, set: &CrossingSet, u: f64) -> f64 {
        self.support()
            .filter(|&(j, _)| !set.contains(j) && j >= 1)
            .map(|(j, b)| j as f64 * b * u.powi(j as i32 - 1))
            .sum()
    }

    /// Tracked part `sum_{k in set} b_k u^k v_k`, with `v` aligned
    /// positionally to the set.
    pub fn eval_tracked(&self, set: &CrossingSet, u: f64, v: &[f64]) -> Result<f64, LawError> {
        if v.len() != set.len() {
            return Err(LawError::DimensionMismatch {
                expected: set.len(),
                got: v.len(),
            });
        }
        Ok(set
            .indices()
            .iter()
            .zip(v)
            .map(|(&k, &vk)| self.rate(k) * u.powi(k as i32) * vk)
            .sum())
    }

    /// Untracked plus tracked parts; collapses to [`eval`](Self::eval) at `v = 1`.
    pub fn eval_split(&self, set: &CrossingSet, u: f64, v: &[f64]) -> Result<f64, LawError> {
        Ok(self.eval_untracked(set, u) + self.eval_tracked(set, u, v)?)
    }

    /// Same law with every rate multiplied by `factor`. The crossing
    /// distributions are invariant under this rescaling.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rates: self.rates.iter().map(|(&j, &b)| (j, factor * b)).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// The finite set of jump indices whose counts are tracked jointly.
/// Index 1 is never a jump, so it is never allowed in the set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossingSet {
    indices: Vec<usize>,
}

impl CrossingSet {
    /// Builds a set from arbitrary indices; sorts and deduplicates.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    /// Tracked indices, strictly increasing.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Dimension of the tracked count vector.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }

    /// Position of index `k` within the set, if tracked.
    pub fn position(&self, k: usize) -> Option<usize> {
        self.indices.binary_search(&k).ok()
    }
}

/// One diagnostic code per invariant, so failures are machine-checkable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// `b_j < 0` for some `j != 1`.
    RateNegative,
    /// `b_1 >= 0`.
    DiagonalRateNotNegative,
    /// `-b_1` and `sum_{j != 1} b_j` disagree beyond [`CONSERVATION_REL_TOL`].
    ConservationViolated,
    /// `b_0 <= 0`: state 0 would be unreachable and every crossing
    /// distribution degenerate.
    DeathRateMissing,
    /// Some listed weight `w_i <= 0`.
    WeightNotPositive,
    /// The crossing set is empty.
    SetEmpty,
    /// The crossing set contains 1.
    SetContainsOne,
    /// `b_k <= 0` for a tracked index `k`.
    SetRateNotPositive,
    /// A serialized rate or weight key is not a decimal integer.
    MalformedIndex,
}

/// A single violated invariant.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub diagnostic: Diagnostic,
    pub detail: String,
}

/// Outcome of validating a law (and optionally a crossing set): either a
/// pass or the full list of violated invariants.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_result(self) -> Result<(), InvalidModel> {
        if self.passed() {
            Ok(())
        } else {
            Err(InvalidModel(self))
        }
    }

    fn push(&mut self, diagnostic: Diagnostic, detail: String) {
        self.violations.push(Violation { diagnostic, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass");
        }
        let mut first = true;
        for v in &self.violations {
            if !first {
                write!(f, "; ")?;
            }
            write!(f, "{:?}: {}", v.diagnostic, v.detail)?;
            first = false;
        }
        Ok(())
    }
}

/// Returned when an operation requires a validated model and got something else.
#[derive(Clone, Debug, Error)]
#[error("model failed validation: {0}")]
pub struct InvalidModel(pub ValidationReport);

/// Errors from generating-function evaluation.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum LawError {
    #[error("argument vector has {got} components, crossing set has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Checks the law invariants alone (no crossing set).
pub fn validate_law(law: &BranchingLaw) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (j, b) in law.rates.iter() {
        if *j != 1 && *b < 0.0 {
            report.push(
                Diagnostic::RateNegative,
                format!("b_{j} = {b} must be nonnegative"),
            );
        }
    }
    let b1 = law.rate(1);
    if b1 >= 0.0 {
        report.push(
            Diagnostic::DiagonalRateNotNegative,
            format!("b_1 = {b1} must be negative"),
        );
    } else {
        let off_diagonal: f64 = law
            .support()
            .filter(|&(j, _)| j != 1)
            .map(|(_, b)| b)
            .sum();
        let gap = (b1 + off_diagonal).abs();
        if gap > CONSERVATION_REL_TOL * b1.abs() {
            report.push(
                Diagnostic::ConservationViolated,
                format!("-b_1 = {} but off-diagonal rates sum to {off_diagonal}", -b1),
            );
        }
    }
    if law.rate(0) <= 0.0 {
        report.push(
            Diagnostic::DeathRateMissing,
            format!("b_0 = {} must be positive", law.rate(0)),
        );
    }
    if let Some(weights) = law.weights() {
        for (i, w) in weights {
            if *w <= 0.0 {
                report.push(
                    Diagnostic::WeightNotPositive,
                    format!("w_{i} = {w} must be positive"),
                );
            }
        }
    }
    report
}

/// Checks the law invariants plus the crossing-set hypotheses. A passing
/// report is the precondition for every other operation in the crate.
pub fn validate(law: &BranchingLaw, set: &CrossingSet) -> ValidationReport {
    let mut report = validate_law(law);
    if set.is_empty() {
        report.push(Diagnostic::SetEmpty, "crossing set must be nonempty".into());
    }
    if set.contains(1) {
        report.push(
            Diagnostic::SetContainsOne,
            "crossing set contains 1".into(),
        );
    }
    for &k in set.indices() {
        if k != 1 && law.rate(k) <= 0.0 {
            report.push(
                Diagnostic::SetRateNotPositive,
                format!("tracked index {k} has rate b_{k} = {}", law.rate(k)),
            );
        }
    }
    report
}

/// On-disk model schema: rate and weight keys are decimal integer strings,
/// absent indices mean zero.
///
/// ```json
/// {"b": {"0": 1.0, "1": -3.0, "2": 2.0}, "weights": null, "crossing_set": [0, 2]}
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub b: BTreeMap<String, f64>,
    #[serde(default)]
    pub weights: Option<BTreeMap<String, f64>>,
    pub crossing_set: Vec<usize>,
}

impl ModelFile {
    pub fn from_parts(law: &BranchingLaw, set: &CrossingSet) -> Self {
        Self {
            b: law.rates.iter().map(|(j, b)| (j.to_string(), *b)).collect(),
            weights: law
                .weights()
                .map(|w| w.iter().map(|(i, v)| (i.to_string(), *v)).collect()),
            crossing_set: set.indices().to_vec(),
        }
    }

    /// Parses and validates; the report carries every violation found.
    pub fn into_parts(self) -> Result<(BranchingLaw, CrossingSet), InvalidModel> {
        let mut report = ValidationReport::default();
        let mut rates = BTreeMap::new();
        for (key, value) in &self.b {
            match key.parse::<usize>() {
                Ok(j) => {
                    rates.insert(j, *value);
                }
                Err(_) => report.push(
                    Diagnostic::MalformedIndex,
                    format!("rate key {key:?} is not a nonnegative integer"),
                ),
            }
        }
        let mut law = BranchingLaw::from_rates(rates);
        if let Some(weights) = &self.weights {
            let mut table = BTreeMap::new();
            for (key, value) in weights {
                match key.parse::<u64>() {
                    Ok(i) => {
                        table.insert(i, *value);
                    }
                    Err(_) => report.push(
                        Diagnostic::MalformedIndex,
                        format!("weight key {key:?} is not a nonnegative integer"),
                    ),
                }
            }
            law = law.with_weights(table);
        }
        let set = CrossingSet::new(self.crossing_set.iter().copied());
        if !report.passed() {
            return Err(InvalidModel(report));
        }
        validate(&law, &set).into_result()?;
        Ok((law, set))
    }
}

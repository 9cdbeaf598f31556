//! Embedded-jump-chain Monte Carlo oracle.
//!
//! The crossing counts are a function of the jump sequence alone, so the
//! estimator simulates the embedded chain rather than continuous time: from
//! any state the next jump displacement is `r - 1` with probability
//! `b_r / -b_1`, independent of the state weights. The timed variant layers
//! exponential holding times on top of the same jump stream, which is where
//! the weights (and only the weights) enter.
//!
//! Paths censored at the step or state cap count as surviving and are
//! excluded from conditional-on-extinction estimates; the censoring rate is
//! reported so callers can judge the bias.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dist::CrossingDistribution;
use crate::law::{validate, validate_law, BranchingLaw, CrossingSet, InvalidModel};
use crate::rng::CounterRng;
use crate::roots::{min_root, RootError};

/// Exact cells below this mass are skipped by [`compare`]; their empirical
/// mass is accumulated separately.
pub const MASS_THRESHOLD: f64 = 1e-3;

/// The comparison gate: pass iff every compared cell has `|z|` at most this.
pub const Z_GATE: f64 = 4.0;

const JUMP_STREAM: u64 = 0;
const HOLDING_STREAM: u64 = 1;

/// Step and state caps; hitting either censors the path.
#[derive(Clone, Copy, Debug)]
pub struct Caps {
    pub max_steps: u64,
    pub max_state: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_steps: 10_000,
            max_state: 1_000_000,
        }
    }
}

/// How holding-time rates resolve state weights in timed mode.
#[derive(Clone, Copy, Debug)]
pub enum WeightRule {
    /// Use the law's weight table; absent states are an error. Laws without
    /// a table fall back to unit weights.
    FromLaw,
    Constant(f64),
    /// `w_i = i`.
    Identity,
}

/// One simulated trajectory of the embedded chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PathOutcome {
    /// Absorbed at zero, as opposed to censored at a cap.
    pub extinct: bool,
    /// Tallies of tracked jumps, aligned with the crossing set.
    pub counts: Vec<u64>,
    pub steps: u64,
    pub final_state: u64,
    /// Accumulated holding time; only present in timed mode.
    pub elapsed_time: Option<f64>,
}

#[derive(Clone, Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Invalid(#[from] InvalidModel),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error("initial state must be at least 1")]
    InitialStateZero,
    #[error("no extinct paths out of {n_paths} ({n_censored} censored); caps too small or law too supercritical")]
    NoExtinctPaths { n_paths: u64, n_censored: u64 },
    #[error("no surviving paths; law is not supercritical enough for the caps")]
    NoSurvivingPaths,
    #[error("extinction probability {rho} is not below 1; survival check needs a supercritical law")]
    NotSupercritical { rho: f64 },
    #[error("weight undefined for reached state {state}")]
    WeightUndefined { state: u64 },
    #[error("configuration mismatch: {detail}")]
    ConfigMismatch { detail: String },
}

/// Embedded-chain jump distribution: pairs `(displacement, probability)` in
/// displacement order. The state weights cancel in the normalization.
pub fn jump_kernel(law: &BranchingLaw) -> Result<Vec<(i64, f64)>, McError> {
    validate_law(law).into_result()?;
    let total = law.total_rate();
    Ok(law
        .support()
        .filter(|&(r, _)| r != 1)
        .map(|(r, b)| (r as i64 - 1, b / total))
        .collect())
}

/// Holding-time state for timed runs: the stream, the total rate scale, and
/// the state-weight resolver.
type TimingContext<'a> = (CounterRng, f64, &'a dyn Fn(u64) -> Result<f64, McError>);

/// Sampler over jump displacements with the tracked tally positions baked in.
struct Sampler {
    displacements: Vec<i64>,
    cumulative: Vec<f64>,
    tally: Vec<Option<usize>>,
    dims: usize,
}

impl Sampler {
    fn new(law: &BranchingLaw, set: &CrossingSet) -> Self {
        let mut displacements = Vec::new();
        let mut cumulative = Vec::new();
        let mut tally = Vec::new();
        let total = law.total_rate();
        let mut acc = 0.0;
        for (r, b) in law.support().filter(|&(r, _)| r != 1) {
            acc += b / total;
            displacements.push(r as i64 - 1);
            cumulative.push(acc);
            tally.push(set.position(r));
        }
        // Guard the last bucket against rounding in the cumulative sum.
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            displacements,
            cumulative,
            tally,
            dims: set.len(),
        }
    }

    fn draw(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    fn run(
        &self,
        initial: u64,
        caps: Caps,
        mut jumps: CounterRng,
        mut timing: Option<TimingContext<'_>>,
    ) -> Result<PathOutcome, McError> {
        let mut state = initial;
        let mut counts = vec![0u64; self.dims];
        let mut steps = 0u64;
        let mut elapsed = timing.as_ref().map(|_| 0.0);
        while state > 0 && steps < caps.max_steps && state < caps.max_state {
            if let Some((rng, total_rate, weight)) = timing.as_mut() {
                let rate = weight(state)? * *total_rate;
                *elapsed.as_mut().expect("timed mode") += rng.next_exp(rate);
            }
            let choice = self.draw(jumps.next_f64());
            if let Some(position) = self.tally[choice] {
                counts[position] += 1;
            }
            let displacement = self.displacements[choice];
            state = state
                .checked_add_signed(displacement)
                .expect("state bookkeeping underflow");
            steps += 1;
        }
        Ok(PathOutcome {
            extinct: state == 0,
            counts,
            steps,
            final_state: state,
            elapsed_time: elapsed,
        })
    }
}

fn resolve_weight(law: &BranchingLaw, rule: WeightRule, state: u64) -> Result<f64, McError> {
    match rule {
        WeightRule::FromLaw => match law.weights() {
            Some(table) => table
                .get(&state)
                .copied()
                .ok_or(McError::WeightUndefined { state }),
            None => Ok(1.0),
        },
        WeightRule::Constant(w) => Ok(w),
        WeightRule::Identity => Ok(state as f64),
    }
}

/// Simulates one embedded-chain path from `initial` until absorption or a cap.
pub fn simulate_path(
    law: &BranchingLaw,
    set: &CrossingSet,
    initial: u64,
    rng_seed: u64,
    caps: Caps,
) -> Result<PathOutcome, McError> {
    validate(law, set).into_result()?;
    if initial == 0 {
        return Err(McError::InitialStateZero);
    }
    let sampler = Sampler::new(law, set);
    sampler.run(
        initial,
        caps,
        CounterRng::new(rng_seed, 0, JUMP_STREAM),
        None,
    )
}

/// Same jump stream as [`simulate_path`], plus exponential holding times at
/// rate `w(state) * -b_1` drawn from a second stream, so the counts match
/// the untimed path bit for bit while elapsed time carries the weights.
pub fn simulate_timed_path(
    law: &BranchingLaw,
    set: &CrossingSet,
    initial: u64,
    rng_seed: u64,
    caps: Caps,
    rule: WeightRule,
) -> Result<PathOutcome, McError> {
    validate(law, set).into_result()?;
    if initial == 0 {
        return Err(McError::InitialStateZero);
    }
    let sampler = Sampler::new(law, set);
    let weight = |state: u64| resolve_weight(law, rule, state);
    sampler.run(
        initial,
        caps,
        CounterRng::new(rng_seed, 0, JUMP_STREAM),
        Some((
            CounterRng::new(rng_seed, 0, HOLDING_STREAM),
            law.total_rate(),
            &weight,
        )),
    )
}

/// Empirical conditional-on-extinction distribution over crossing counts.
#[derive(Clone, Debug)]
pub struct EmpiricalDistribution {
    pub indices: Vec<usize>,
    pub initial_state: u64,
    pub n_paths: u64,
    pub n_extinct: u64,
    pub n_censored: u64,
    pub extinct_fraction: f64,
    pub censor_rate: f64,
    /// Count vector of each extinct path, with multiplicity.
    pub frequencies: BTreeMap<Vec<u64>, u64>,
}

impl EmpiricalDistribution {
    pub fn probability(&self, counts: &[u64]) -> f64 {
        if self.n_extinct == 0 {
            return 0.0;
        }
        self.frequencies
            .get(counts)
            .map(|&c| c as f64 / self.n_extinct as f64)
            .unwrap_or(0.0)
    }
}

/// Runs `n_paths` independent paths with streams keyed by `(seed, path)`,
/// split across `threads` workers. The result is identical for any thread
/// count, including one.
pub fn estimate_distribution(
    law: &BranchingLaw,
    set: &CrossingSet,
    initial: u64,
    n_paths: u64,
    caps: Caps,
    seed: u64,
    threads: Option<usize>,
) -> Result<EmpiricalDistribution, McError> {
    validate(law, set).into_result()?;
    if initial == 0 {
        return Err(McError::InitialStateZero);
    }
    let sampler = Sampler::new(law, set);
    let workers = threads
        .or_else(|| std::thread::available_parallelism().ok().map(usize::from))
        .unwrap_or(1)
        .clamp(1, n_paths.max(1) as usize);

    let chunk = n_paths.div_ceil(workers as u64);
    let partials: Vec<(BTreeMap<Vec<u64>, u64>, u64, u64)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers as u64 {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(n_paths);
            let sampler = &sampler;
            handles.push(scope.spawn(move || {
                let mut freqs: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
                let mut extinct = 0u64;
                let mut censored = 0u64;
                for path in lo..hi {
                    let outcome = sampler
                        .run(initial, caps, CounterRng::new(seed, path, JUMP_STREAM), None)
                        .expect("untimed path cannot fail");
                    if outcome.extinct {
                        extinct += 1;
                        *freqs.entry(outcome.counts).or_insert(0) += 1;
                    } else {
                        censored += 1;
                    }
                }
                (freqs, extinct, censored)
            }));
        }
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut frequencies: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    let mut n_extinct = 0u64;
    let mut n_censored = 0u64;
    for (freqs, extinct, censored) in partials {
        n_extinct += extinct;
        n_censored += censored;
        for (counts, c) in freqs {
            *frequencies.entry(counts).or_insert(0) += c;
        }
    }
    if n_extinct == 0 {
        return Err(McError::NoExtinctPaths {
            n_paths,
            n_censored,
        });
    }
    Ok(EmpiricalDistribution {
        indices: set.indices().to_vec(),
        initial_state: initial,
        n_paths,
        n_extinct,
        n_censored,
        extinct_fraction: n_extinct as f64 / n_paths as f64,
        censor_rate: n_censored as f64 / n_paths as f64,
        frequencies,
    })
}

/// One compared cell: binomial standard error and z-score of the empirical
/// frequency against the exact probability.
#[derive(Clone, Debug)]
pub struct CellComparison {
    pub counts: Vec<u64>,
    pub exact: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub cells: Vec<CellComparison>,
    pub max_abs_z: f64,
    pub n_extinct: u64,
    pub mass_threshold: f64,
    pub z_gate: f64,
    /// Empirical mass sitting on cells whose exact mass is below the
    /// threshold (including cells the exact table does not carry at all).
    pub unmatched_empirical_mass: f64,
    pub pass: bool,
}

/// Compares every exact cell of mass at least [`MASS_THRESHOLD`] against the
/// empirical frequencies; passes iff `max |z|` stays within [`Z_GATE`].
pub fn compare(
    exact: &CrossingDistribution,
    empirical: &EmpiricalDistribution,
) -> Result<ComparisonReport, McError> {
    if exact.set().indices() != empirical.indices {
        return Err(McError::ConfigMismatch {
            detail: format!(
                "exact tracks {:?}, empirical tracks {:?}",
                exact.set().indices(),
                empirical.indices
            ),
        });
    }
    if exact.initial_state() != empirical.initial_state {
        return Err(McError::ConfigMismatch {
            detail: format!(
                "exact starts at {}, empirical at {}",
                exact.initial_state(),
                empirical.initial_state
            ),
        });
    }
    let n = empirical.n_extinct as f64;
    let mut cells = Vec::new();
    let mut max_abs_z = 0.0_f64;
    let mut matched_mass = 0.0;
    for (index, p) in exact.iter() {
        if p < MASS_THRESHOLD {
            continue;
        }
        let counts: Vec<u64> = index.counts().iter().map(|&c| c as u64).collect();
        let p_hat = empirical.probability(&counts);
        matched_mass += p_hat;
        let std_error = (p * (1.0 - p) / n).sqrt();
        let z = if std_error > 0.0 {
            (p_hat - p) / std_error
        } else if p_hat == p {
            0.0
        } else {
            f64::INFINITY
        };
        max_abs_z = max_abs_z.max(z.abs());
        cells.push(CellComparison {
            counts,
            exact: p,
            empirical: p_hat,
            std_error,
            z,
        });
    }
    Ok(ComparisonReport {
        max_abs_z,
        n_extinct: empirical.n_extinct,
        mass_threshold: MASS_THRESHOLD,
        z_gate: Z_GATE,
        unmatched_empirical_mass: 1.0 - matched_mass,
        pass: max_abs_z <= Z_GATE,
        cells,
    })
}

/// Outcome of the survival divergence check: among censored (surviving)
/// paths, the fraction whose tracked count reached `threshold`.
#[derive(Clone, Debug)]
pub struct SurvivalReport {
    pub n_paths: u64,
    pub n_surviving: u64,
    pub threshold: u64,
    pub fraction_at_or_above: f64,
}

/// Checks that surviving paths accumulate unboundedly many `m`-jumps: the
/// reported fraction tends to 1 as the caps grow.
pub fn survival_divergence_check(
    law: &BranchingLaw,
    m: usize,
    threshold: u64,
    n_paths: u64,
    caps: Caps,
    seed: u64,
    threads: Option<usize>,
) -> Result<SurvivalReport, McError> {
    let set = CrossingSet::new([m]);
    validate(law, &set).into_result()?;
    let rho = min_root(law)?.value;
    if rho >= 1.0 - 1e-9 {
        return Err(McError::NotSupercritical { rho });
    }
    let sampler = Sampler::new(law, &set);
    let workers = threads
        .or_else(|| std::thread::available_parallelism().ok().map(usize::from))
        .unwrap_or(1)
        .clamp(1, n_paths.max(1) as usize);
    let chunk = n_paths.div_ceil(workers as u64);
    let partials: Vec<(u64, u64)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers as u64 {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(n_paths);
            let sampler = &sampler;
            handles.push(scope.spawn(move || {
                let mut surviving = 0u64;
                let mut hits = 0u64;
                for path in lo..hi {
                    let outcome = sampler
                        .run(1, caps, CounterRng::new(seed, path, JUMP_STREAM), None)
                        .expect("untimed path cannot fail");
                    if !outcome.extinct {
                        surviving += 1;
                        if outcome.counts[0] >= threshold {
                            hits += 1;
                        }
                    }
                }
                (surviving, hits)
            }));
        }
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let n_surviving: u64 = partials.iter().map(|&(s, _)| s).sum();
    let hits: u64 = partials.iter().map(|&(_, h)| h).sum();
    if n_surviving == 0 {
        return Err(McError::NoSurvivingPaths);
    }
    Ok(SurvivalReport {
        n_paths,
        n_surviving,
        threshold,
        fraction_at_or_above: hits as f64 / n_surviving as f64,
    })
}

//! Acceptance suite: every criterion pinned at its stated tolerance, one
//! pass line printed per criterion (visible with `--nocapture`).
//!
//! Expected values here are either trivial consequences of the model,
//! independently derived closed forms (quadratic formula, term-by-term
//! differentiation of the closed-form root), or frozen outputs of the
//! independent oracle recursions — never copied from the implementation
//! under test.

use std::collections::BTreeMap;
use std::time::Instant;

use crossing_core::{
    compare, conditional_distribution, crossing_series, cubic_death_series, death_series,
    estimate_distribution, min_root, min_root_at, moments, survival_divergence_check,
    BranchingLaw, Caps, CrossingSet, MultiIndex,
};

fn birth_death(mu: f64, lambda: f64) -> BranchingLaw {
    BranchingLaw::from_pairs([(0, mu), (1, -(mu + lambda)), (2, lambda)])
}

fn cubic_law(p: f64, q: f64) -> BranchingLaw {
    BranchingLaw::from_pairs([(0, 2.0 * q), (1, -3.0 * p), (3, 1.0)])
}

/// Odd double factorial `m!! = m (m-2) ... 1` for odd `m >= -1`.
fn double_factorial(m: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = m;
    while k >= 2 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Closed-form diagonal coefficient of the joint death/up-crossing series
/// for the quadratic law: `(2n-3)!! 2^(n-1) mu^n lambda^(n-1) / (n! (mu+lambda)^(2n-1))`.
fn diagonal_coefficient(mu: f64, lambda: f64, n: u32) -> f64 {
    if n == 1 {
        return mu / (mu + lambda);
    }
    double_factorial(2 * n as i64 - 3) * 2f64.powi(n as i32 - 1) * mu.powi(n as i32)
        * lambda.powi(n as i32 - 1)
        / (factorial(n) * (mu + lambda).powi(2 * n as i32 - 1))
}

/// Criterion 1: the joint series over tracked indices {0, 2} reproduces the
/// closed form for three rate pairs — diagonal cells to 1e-10, every other
/// cell below 1e-12 — inside 5 seconds.
#[test]
fn criterion_1_joint_series_closed_form() {
    let started = Instant::now();
    let set = CrossingSet::new([0, 2]);
    for (mu, lambda) in [(1.0, 1.0), (2.0, 1.0), (1.0, 3.0)] {
        let law = birth_death(mu, lambda);
        let series = crossing_series(&law, &set, 30).unwrap();
        for n in 1..=15u32 {
            let index = MultiIndex::new(vec![n, n - 1]);
            let expected = diagonal_coefficient(mu, lambda, n);
            let got = series.coefficient(&index);
            assert!(
                (got - expected).abs() <= 1e-10,
                "mu={mu} lambda={lambda} n={n}: {got} vs {expected}"
            );
        }
        for (index, value) in series.iter() {
            let (a, b) = (index.get(0), index.get(1));
            let on_diagonal = a >= 1 && b + 1 == a;
            if !on_diagonal {
                assert!(
                    value.abs() <= 1e-12,
                    "mu={mu} lambda={lambda}: off-pattern {index} = {value}"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 1 PASS: joint closed form, three rate pairs, n <= 15 ({elapsed:?})");
}

/// Criterion 2: the general death recursion agrees with the independent
/// cubic-family oracle coefficientwise to rel 1e-10 / abs 1e-12 through
/// degree 40, and the degree-2 coefficient vanishes to 1e-14.
#[test]
fn criterion_2_cubic_cross_oracle() {
    for (p, q) in [(1.0, 1.0), (3.0, 4.0)] {
        let direct = death_series(&cubic_law(p, q), 40).unwrap();
        let oracle = cubic_death_series(p, q, 40).unwrap();
        for d in 0..=40u32 {
            let index = MultiIndex::new(vec![d]);
            let a = direct.coefficient(&index);
            let b = oracle.coefficient(&index);
            assert!(
                (a - b).abs() <= 1e-12 + 1e-10 * b.abs(),
                "(p,q)=({p},{q}) degree {d}: direct {a}, oracle {b}"
            );
        }
        assert!(direct.coefficient(&MultiIndex::new(vec![2])).abs() <= 1e-14);
        assert!(oracle.coefficient(&MultiIndex::new(vec![2])).abs() <= 1e-14);
    }
    println!("criterion 2 PASS: cubic-family cross-oracle, degrees <= 40, both parameter pairs");
}

/// Criterion 3: subcritical death counts normalize and match the moments
/// obtained by differentiating the closed-form root `(3 - sqrt(9 - 8v)) / 2`:
/// mean 2, variance 6, converged, within a second.
#[test]
fn criterion_3_normalization_and_moments() {
    let started = Instant::now();
    let law = birth_death(2.0, 1.0);
    let set = CrossingSet::new([0]);

    let rho = min_root(&law).unwrap().value;
    assert!((rho - 1.0).abs() <= 1e-12, "rho = {rho}");

    let series = crossing_series(&law, &set, 200).unwrap();
    let missing = 1.0 - series.total_mass();
    assert!(missing <= 1e-8, "missing mass {missing:e}");

    let report = moments(&law, &set, 0, 200).unwrap();
    assert!(report.converged);
    assert!((report.mean - 2.0).abs() <= 1e-6, "mean {}", report.mean);
    assert!(
        (report.variance - 6.0).abs() <= 1e-4,
        "variance {}",
        report.variance
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 3 PASS: mass captured to {missing:.1e}, mean {:.9}, variance {:.6} ({elapsed:?})",
        report.mean, report.variance
    );
}

/// Criterion 4: supercritical conditional death distribution — exact root
/// and first cell pinned, then a 1e5-path simulation matches every exact
/// cell of mass >= 1e-3 within |z| <= 4, all inside 60 seconds.
#[test]
fn criterion_4_supercritical_conditional_check() {
    let started = Instant::now();
    let law = birth_death(1.0, 2.0);
    let set = CrossingSet::new([0]);

    let rho = min_root(&law).unwrap().value;
    assert!((rho - 0.5).abs() <= 1e-12, "rho = {rho}");

    let exact = conditional_distribution(&law, &set, 1, 100).unwrap();
    let p1 = exact.probability(&MultiIndex::new(vec![1]));
    assert!((p1 - 2.0 / 3.0).abs() <= 1e-10, "P(1) = {p1}");

    let caps = Caps {
        max_steps: 10_000,
        max_state: 1_000_000,
    };
    let empirical = estimate_distribution(&law, &set, 1, 100_000, caps, 7, None).unwrap();
    let report = compare(&exact, &empirical).unwrap();
    assert!(
        report.pass,
        "max |z| = {} over {} cells",
        report.max_abs_z,
        report.cells.len()
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 4 PASS: {} cells, max |z| = {:.2}, extinct fraction {:.4} ({elapsed:?})",
        report.cells.len(),
        report.max_abs_z,
        empirical.extinct_fraction
    );
}

/// Criterion 5: critical joint law — empirical frequencies of a 1e5-path
/// run match the closed-form cells 1/2, 1/8, 1/16 within |z| <= 4 and put
/// exactly zero mass on cells off the diagonal pattern.
#[test]
fn criterion_5_critical_joint_check() {
    let law = birth_death(1.0, 1.0);
    let set = CrossingSet::new([0, 2]);
    // The default step cap censors ~0.8% of critical paths, which biases the
    // lightest cells by a couple of standard errors at this path count; a
    // 1e6-step cap drops censoring below statistical resolution.
    let caps = Caps {
        max_steps: 1_000_000,
        max_state: 1_000_000,
    };
    let empirical = estimate_distribution(&law, &set, 1, 100_000, caps, 11, None).unwrap();

    let n = empirical.n_extinct as f64;
    for (cell, expected) in [
        (vec![1u64, 0u64], 0.5),
        (vec![2, 1], 0.125),
        (vec![3, 2], 0.0625),
    ] {
        let p_hat = empirical.probability(&cell);
        let se = (expected * (1.0 - expected) / n).sqrt();
        let z = (p_hat - expected) / se;
        assert!(
            z.abs() <= 4.0,
            "cell {cell:?}: empirical {p_hat}, expected {expected}, z = {z}"
        );
    }

    // Extinction from one particle forces deaths = up-crossings + 1, so any
    // off-pattern cell in the empirical table is a simulator defect.
    for counts in empirical.frequencies.keys() {
        assert_eq!(
            counts[0],
            counts[1] + 1,
            "off-pattern empirical cell {counts:?}"
        );
    }

    let exact = conditional_distribution(&law, &set, 1, 40).unwrap();
    let report = compare(&exact, &empirical).unwrap();
    assert!(report.pass, "max |z| = {}", report.max_abs_z);
    println!(
        "criterion 5 PASS: three pinned cells and {} thresholded cells, max |z| = {:.2}, censor rate {:.5}",
        report.cells.len(),
        report.max_abs_z,
        empirical.censor_rate
    );
}

/// Criterion 6: on survival the up-crossing count diverges — at least 99%
/// of censored paths accumulate 50 or more up-crossings by the step cap.
#[test]
fn criterion_6_survival_divergence() {
    let law = birth_death(1.0, 2.0);
    let caps = Caps {
        max_steps: 10_000,
        max_state: 1_000_000,
    };
    let report = survival_divergence_check(&law, 2, 50, 10_000, caps, 13, None).unwrap();
    assert!(
        report.fraction_at_or_above >= 0.99,
        "fraction {} over {} surviving paths",
        report.fraction_at_or_above,
        report.n_surviving
    );
    println!(
        "criterion 6 PASS: {:.4} of {} surviving paths reached the threshold",
        report.fraction_at_or_above, report.n_surviving
    );
}

/// Deterministic random-law generator for the invariant sweep: supports
/// inside {0,...,6}, conservation enforced by construction.
struct LawSampler {
    rng: crossing_core::rng::CounterRng,
}

impl LawSampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: crossing_core::rng::CounterRng::new(seed, 0, 0),
        }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.next_f64()
    }

    fn law(&mut self) -> BranchingLaw {
        let mut rates = BTreeMap::new();
        rates.insert(0, self.uniform(0.2, 2.0));
        for j in 2..=6usize {
            if self.rng.next_f64() < 0.5 {
                rates.insert(j, self.uniform(0.05, 1.5));
            }
        }
        let total: f64 = rates.values().sum();
        rates.insert(1, -total);
        BranchingLaw::from_rates(rates)
    }

    fn crossing_set(&mut self, law: &BranchingLaw) -> CrossingSet {
        let candidates: Vec<usize> = law
            .support()
            .filter(|&(j, _)| j != 1)
            .map(|(j, _)| j)
            .collect();
        let mut picked: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|_| self.rng.next_f64() < 0.5)
            .collect();
        if picked.is_empty() {
            picked.push(candidates[0]);
        }
        picked.truncate(3);
        CrossingSet::new(picked)
    }
}

/// Criterion 7: the invariant sweep over 200 random finite-support laws.
#[test]
fn criterion_7_invariant_sweep() {
    let mut sampler = LawSampler::new(2024);
    for case in 0..200 {
        let law = sampler.law();
        let set = sampler.crossing_set(&law);
        let dims = set.len();

        // Nonnegative coefficients (the solver errors past -1e-14, so a
        // successful solve plus this scan covers the clamp band too).
        let series = crossing_series(&law, &set, 10)
            .unwrap_or_else(|e| panic!("case {case}: solve failed: {e}"));
        for (index, value) in series.iter() {
            assert!(value >= 0.0, "case {case}: negative coefficient at {index}");
        }

        // Tracked-argument roots never exceed the extinction probability.
        let rho = min_root(&law).unwrap().value;
        for _ in 0..5 {
            let v: Vec<f64> = (0..dims).map(|_| sampler.uniform(0.0, 1.0)).collect();
            let at = min_root_at(&law, &set, &v).unwrap().value;
            assert!(
                at <= rho + 1e-12,
                "case {case}: root at v {at} exceeds rho {rho}"
            );
        }

        // The death fast path reproduces the general solver.
        let fast = death_series(&law, 30).unwrap();
        let general = crossing_series(&law, &CrossingSet::new([0]), 30).unwrap();
        for d in 0..=30u32 {
            let index = MultiIndex::new(vec![d]);
            assert!(
                (fast.coefficient(&index) - general.coefficient(&index)).abs() <= 1e-12,
                "case {case}: fast path diverges at degree {d}"
            );
        }

        // Rate-scale invariance of the distribution.
        let base = conditional_distribution(&law, &set, 1, 10).unwrap();
        let scaled = conditional_distribution(&law.scaled(3.0), &set, 1, 10).unwrap();
        for (index, value) in base.iter() {
            assert!(
                (scaled.probability(index) - value).abs() <= 1e-12,
                "case {case}: scaling moved {index}"
            );
        }

        // Weight invariance of the distribution.
        let weighted = law
            .clone()
            .with_weights(BTreeMap::from([(1, 2.5), (2, 0.5), (3, 7.0)]));
        let reweighted = conditional_distribution(&weighted, &set, 1, 10).unwrap();
        for (index, value) in base.iter() {
            assert_eq!(
                reweighted.probability(index),
                value,
                "case {case}: weights leaked into the distribution"
            );
        }

        // Two starting particles behave as independent copies.
        let two = conditional_distribution(&law, &set, 2, 10).unwrap();
        for (index, value) in two.iter() {
            let mut convolved = 0.0;
            for (a, pa) in base.iter() {
                if let Some(b) = index.checked_sub(a) {
                    convolved += pa * base.probability(&b);
                }
            }
            assert!(
                (value - convolved).abs() <= 1e-12,
                "case {case}: self-convolution mismatch at {index}"
            );
        }
    }
    println!("criterion 7 PASS: 200 random laws swept through all six invariants");
}

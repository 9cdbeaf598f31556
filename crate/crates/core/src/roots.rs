//! Minimal nonnegative roots of the rate generating functions on `[0, 1]`.
//!
//! The root of `B(u) = 0` is the extinction probability from state 1; the
//! root of the split function at a tracked-argument vector `v` generates the
//! crossing-count sub-probabilities. Both functions are convex on `[0, 1]`
//! with a nonnegative value at 0 and a nonpositive value at 1, so a minimal
//! root always exists there.
//!
//! Selection of the *minimal* root uses the monotone fixed-point map
//! `u <- u + F(u) / (-b_1)`: all non-diagonal coefficients of `F` are
//! nonnegative, so iterates starting from 0 increase and converge to the
//! smallest root. A Newton polish then sharpens the iterate; Newton steps
//! taken from the left of the smallest root of a convex function stay to
//! its left, so the polish cannot escape to the larger root.

use thiserror::Error;

use crate::law::{validate, validate_law, BranchingLaw, CrossingSet, InvalidModel, LawError};

/// Hand over to Newton once fixed-point steps shrink below this; near
/// criticality the plain iteration contracts like 1/n, so waiting for a
/// 1e-13 step would blow the iteration cap.
const NEWTON_HANDOFF: f64 = 1e-9;

/// Fixed-point iteration cap. Hitting it with a bad residual signals
/// pathological input rather than stalling silently.
pub const ITERATION_CAP: u64 = 1_000_000;

/// Residual acceptance is `RESIDUAL_REL_TOL * (|b_1| + sum_{j != 1} b_j)`.
pub const RESIDUAL_REL_TOL: f64 = 1e-12;

const NEWTON_CAP: u64 = 200;

/// A located root with its measured residual and iteration count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootResult {
    /// The minimal nonnegative root, in `[0, 1]`.
    pub value: f64,
    /// `|F(value)|` at the returned point.
    pub residual: f64,
    /// Fixed-point plus Newton iterations spent.
    pub iterations: u64,
}

#[derive(Clone, Debug, Error)]
pub enum RootError {
    #[error(transparent)]
    Invalid(#[from] InvalidModel),
    #[error(transparent)]
    Dimension(#[from] LawError),
    #[error("iteration cap exceeded, best residual {residual:e}")]
    IterationCapExceeded { residual: f64 },
    /// The bracketing `F(0) >= 0 >= F(1)` failed, which cannot happen for a
    /// validated model; report it instead of returning a wrong root.
    #[error("no root in [0, 1]: F(0) = {at_zero:e}, F(1) = {at_one:e}")]
    NoRootInUnitInterval { at_zero: f64, at_one: f64 },
}

/// Extinction probability from state 1: minimal root of `B(u) = 0`.
pub fn min_root(law: &BranchingLaw) -> Result<RootResult, RootError> {
    validate_law(law).into_result()?;
    let scale = law.total_rate() * 2.0;
    minimal_root(
        |u| law.eval(u),
        |u| law.eval_deriv(u),
        law.total_rate(),
        scale,
    )
}

/// Minimal root of the split function at tracked arguments `v`; with
/// `v = 0` this is the constant term of the crossing series, and its value
/// never exceeds [`min_root`].
pub fn min_root_at(
    law: &BranchingLaw,
    set: &CrossingSet,
    v: &[f64],
) -> Result<RootResult, RootError> {
    validate(law, set).into_result()?;
    if v.len() != set.len() {
        return Err(LawError::DimensionMismatch {
            expected: set.len(),
            got: v.len(),
        }
        .into());
    }
    let scale = law.total_rate() * 2.0;
    minimal_root(
        |u| law.eval_untracked(set, u) + law.eval_tracked(set, u, v).expect("checked length"),
        |u| {
            law.eval_untracked_deriv(set, u)
                + set
                    .indices()
                    .iter()
                    .zip(v)
                    .filter(|(&k, _)| k >= 1)
                    .map(|(&k, &vk)| k as f64 * law.rate(k) * vk * u.powi(k as i32 - 1))
                    .sum::<f64>()
        },
        law.total_rate(),
        scale,
    )
}

/// Core solver for a convex `F` with `F(0) >= 0 >= F(1)` (up to conservation
/// slack) whose diagonal coefficient is `-total_rate`.
fn minimal_root(
    f: impl Fn(f64) -> f64,
    f_deriv: impl Fn(f64) -> f64,
    total_rate: f64,
    scale: f64,
) -> Result<RootResult, RootError> {
    let accept = RESIDUAL_REL_TOL * scale;

    let at_zero = f(0.0);
    if at_zero <= 0.0 {
        // F(0) = b_0 or b_0 * v_0; exactly zero when the death index is
        // tracked with argument zero, and then 0 is the minimal root.
        return Ok(RootResult {
            value: 0.0,
            residual: at_zero.abs(),
            iterations: 0,
        });
    }
    let at_one = f(1.0);
    if at_one > accept {
        return Err(RootError::NoRootInUnitInterval { at_zero, at_one });
    }
    if at_one.abs() <= accept && f_deriv(1.0) <= 0.0 {
        // Convexity: with F(1) = 0 and a nonpositive slope there (simple or
        // double root), any interior zero would force F to vanish on a whole
        // interval, impossible with F(0) > 0. So 1 is the minimal root.
        return Ok(RootResult {
            value: 1.0,
            residual: at_one.abs(),
            iterations: 0,
        });
    }

    // Phase 1: monotone fixed point from below.
    let mut u = 0.0_f64;
    let mut iterations = 0u64;
    while iterations < ITERATION_CAP {
        iterations += 1;
        let next = (u + f(u) / total_rate).clamp(0.0, 1.0);
        let step = next - u;
        u = next;
        if step.abs() <= NEWTON_HANDOFF {
            break;
        }
    }

    // Phase 2: Newton polish; track the best iterate by residual since the
    // steps become noise-limited near a double root.
    let mut best = u;
    let mut best_residual = f(u).abs();
    for _ in 0..NEWTON_CAP {
        iterations += 1;
        let value = f(u);
        if value.abs() < best_residual {
            best = u;
            best_residual = value.abs();
        }
        let slope = f_deriv(u);
        if slope >= 0.0 {
            break;
        }
        let next = (u - value / slope).clamp(0.0, 1.0);
        if (next - u).abs() <= 1e-16 {
            u = next;
            break;
        }
        u = next;
    }
    let value = f(u);
    if value.abs() < best_residual {
        best = u;
        best_residual = value.abs();
    }

    if best_residual <= accept {
        Ok(RootResult {
            value: best,
            residual: best_residual,
            iterations,
        })
    } else {
        Err(RootError::IterationCapExceeded {
            residual: best_residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::BranchingLaw;

    fn birth_death(mu: f64, lambda: f64) -> BranchingLaw {
        BranchingLaw::from_pairs([(0, mu), (1, -(mu + lambda)), (2, lambda)])
    }

    #[test]
    fn supercritical_root_is_ratio() {
        let root = min_root(&birth_death(1.0, 2.0)).unwrap();
        assert!((root.value - 0.5).abs() <= 1e-14);
        assert!(root.residual <= 1e-12 * 6.0);
    }

    #[test]
    fn subcritical_root_is_one() {
        let root = min_root(&birth_death(2.0, 1.0)).unwrap();
        assert!((root.value - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn critical_root_is_one() {
        let root = min_root(&birth_death(1.0, 1.0)).unwrap();
        assert!((root.value - 1.0).abs() <= 1e-6);
        assert!(root.residual <= 1e-12 * 4.0);
    }

    #[test]
    fn pure_death_root_is_one() {
        let law = BranchingLaw::from_pairs([(0, 1.0), (1, -1.0)]);
        let root = min_root(&law).unwrap();
        assert_eq!(root.value, 1.0);
    }

    #[test]
    fn split_root_collapses_at_ones() {
        let law = birth_death(1.0, 1.0);
        let set = CrossingSet::new([0, 2]);
        let root = min_root_at(&law, &set, &[1.0, 1.0]).unwrap();
        assert!((root.value - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn split_root_closed_form() {
        // mu y - (mu + lambda) u + lambda z u^2 at (y, z) = (0.5, 1): the
        // smaller quadratic root is 1 - sqrt(0.5).
        let law = birth_death(1.0, 1.0);
        let set = CrossingSet::new([0, 2]);
        let root = min_root_at(&law, &set, &[0.5, 1.0]).unwrap();
        assert!((root.value - (1.0 - 0.5_f64.sqrt())).abs() <= 1e-12);
    }

    #[test]
    fn tracked_death_at_zero_gives_zero() {
        let law = birth_death(1.0, 2.0);
        let set = CrossingSet::new([0]);
        let root = min_root_at(&law, &set, &[0.0]).unwrap();
        assert_eq!(root.value, 0.0);
    }

    #[test]
    fn minimality_on_grid() {
        // F stays strictly positive left of the returned root.
        for (mu, lambda) in [(1.0, 2.0), (1.0, 3.0), (2.0, 1.0)] {
            let law = birth_death(mu, lambda);
            let root = min_root(&law).unwrap();
            for i in 0..200 {
                let u = root.value * i as f64 / 200.0;
                assert!(law.eval(u) > 0.0, "F({u}) not positive for mu={mu}");
            }
        }
    }

    #[test]
    fn dominance_over_tracked_roots() {
        let law = birth_death(1.0, 2.0);
        let set = CrossingSet::new([0, 2]);
        let rho = min_root(&law).unwrap().value;
        for v0 in [0.0, 0.3, 0.8, 1.0] {
            for v2 in [0.0, 0.5, 1.0] {
                let at = min_root_at(&law, &set, &[v0, v2]).unwrap().value;
                assert!(at <= rho + 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_consistency() {
        let law = birth_death(1.0, 2.0);
        let root = min_root(&law).unwrap();
        let reconstructed = (law.rate(0) + law.rate(2) * root.value * root.value) / 3.0;
        assert!((reconstructed - root.value).abs() <= 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let law = birth_death(1.0, 2.0);
        let set = CrossingSet::new([0, 2]);
        assert!(matches!(
            min_root_at(&law, &set, &[1.0]),
            Err(RootError::Dimension(_))
        ));
    }
}

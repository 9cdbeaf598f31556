//! Truncated multivariate power series and the coefficient recursions that
//! produce the crossing-count sub-probabilities.
//!
//! The central object is the series expansion of the minimal root of the
//! split generating-function equation in the tracked arguments: its
//! coefficient at a multi-index `l` is the sub-probability that the process
//! dies out having produced exactly `l` tracked jumps. The solver works
//! degree by degree. Matching the coefficient of `v^l` in
//! `sum_{j untracked} b_j s(v)^j + sum_{k tracked} b_k v_k s(v)^k = 0`
//! leaves the unknown coefficient appearing linearly with factor equal to
//! the untracked derivative at the constant term; everything else involves
//! known lower-degree coefficients through convolution powers, which are
//! maintained incrementally as single-monomial binomial updates.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::law::{validate, validate_law, BranchingLaw, CrossingSet, InvalidModel};
use crate::roots::{min_root_at, RootError};

/// Coefficients in `[-NEGATIVE_CLAMP, 0)` are rounding noise and clamp to
/// zero; anything more negative is a genuine defect and aborts the solve.
pub const NEGATIVE_CLAMP: f64 = 1e-14;

/// The recursion denominator must stay away from zero by this much.
pub const DERIVATIVE_FLOOR: f64 = 1e-10;

/// Exponent vector over the tracked components, compared by total degree
/// first so series iteration runs in recursion order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    counts: Vec<u32>,
}

impl MultiIndex {
    pub fn new(counts: impl Into<Vec<u32>>) -> Self {
        Self {
            counts: counts.into(),
        }
    }

    pub fn zero(dims: usize) -> Self {
        Self {
            counts: vec![0; dims],
        }
    }

    /// 1 at `position`, 0 elsewhere.
    pub fn unit(dims: usize, position: usize) -> Self {
        let mut counts = vec![0; dims];
        counts[position] = 1;
        Self { counts }
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    /// Total degree: the sum of all components.
    pub fn degree(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, position: usize) -> u32 {
        self.counts[position]
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn plus(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self {
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Componentwise subtraction, `None` if any component would go negative.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        debug_assert_eq!(self.dims(), other.dims());
        let mut counts = Vec::with_capacity(self.dims());
        for (a, b) in self.counts.iter().zip(&other.counts) {
            counts.push(a.checked_sub(*b)?);
        }
        Some(Self { counts })
    }

    /// Decrement one component, `None` if it is already zero.
    pub fn minus_unit(&self, position: usize) -> Option<Self> {
        if self.counts[position] == 0 {
            return None;
        }
        let mut counts = self.counts.clone();
        counts[position] -= 1;
        Some(Self { counts })
    }

    pub fn scaled(&self, t: u32) -> Self {
        Self {
            counts: self.counts.iter().map(|c| c * t).collect(),
        }
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.counts.cmp(&other.counts))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A multivariate power series truncated at a maximum total degree.
/// Absent indices are zero; stored coefficients of a solved crossing series
/// are nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSeries {
    dims: usize,
    max_degree: u32,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl TruncatedSeries {
    pub fn zero(dims: usize, max_degree: u32) -> Self {
        Self {
            dims,
            max_degree,
            coeffs: BTreeMap::new(),
        }
    }

    /// The multiplicative unit: 1 at the zero index.
    pub fn unit(dims: usize, max_degree: u32) -> Self {
        let mut s = Self::zero(dims, max_degree);
        s.coeffs.insert(MultiIndex::zero(dims), 1.0);
        s
    }

    /// Collects terms, dropping zeros and anything past the truncation.
    pub fn from_terms(
        dims: usize,
        max_degree: u32,
        terms: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Self {
        let mut s = Self::zero(dims, max_degree);
        for (index, value) in terms {
            assert_eq!(index.dims(), dims, "index dimension mismatch");
            if value != 0.0 && index.degree() <= max_degree {
                s.coeffs.insert(index, value);
            }
        }
        s
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn coefficient(&self, index: &MultiIndex) -> f64 {
        self.coeffs.get(index).copied().unwrap_or(0.0)
    }

    /// Stored (nonzero) terms in degree-then-lex order.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(i, &v)| (i, v))
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    /// Sum of all stored coefficients.
    pub fn total_mass(&self) -> f64 {
        self.coeffs.values().sum()
    }

    /// Sum of coefficients with total degree at most `degree`.
    pub fn mass_up_to(&self, degree: u32) -> f64 {
        self.iter()
            .filter(|(i, _)| i.degree() <= degree)
            .map(|(_, v)| v)
            .sum()
    }

    /// Evaluates the truncation at `v`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dims, "argument dimension mismatch");
        self.iter()
            .map(|(index, value)| {
                value
                    * index
                        .counts()
                        .iter()
                        .zip(v)
                        .map(|(&c, &vk)| vk.powi(c as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Product truncated at the smaller of the two degrees.
    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dims, rhs.dims, "series dimension mismatch");
        let max_degree = self.max_degree.min(rhs.max_degree);
        let mut out = Self::zero(self.dims, max_degree);
        for (ia, va) in self.iter() {
            if ia.degree() > max_degree {
                continue;
            }
            for (ib, vb) in rhs.iter() {
                if ia.degree() + ib.degree() > max_degree {
                    continue;
                }
                *out.coeffs.entry(ia.plus(ib)).or_insert(0.0) += va * vb;
            }
        }
        out.coeffs.retain(|_, v| *v != 0.0);
        out
    }
}

#[derive(Clone, Debug, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Invalid(#[from] InvalidModel),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error("recursion denominator {value:e} is below {floor:e}", floor = DERIVATIVE_FLOOR)]
    DegenerateDerivative { value: f64 },
    #[error("truncation order must be at least 1")]
    TruncationTooSmall,
    #[error("coefficient at {index} is {value:e}, beyond rounding noise")]
    NegativeCoefficient { index: MultiIndex, value: f64 },
    #[error("rate table does not describe the cubic family: need 3p = 2q + 1 with p, q > 0")]
    NotCubicFamily,
}

/// `j`-fold convolution power of a truncated series: `j = 0` is the unit,
/// and the coefficient at `l` sums products over ordered decompositions of
/// `l` into `j` parts.
pub fn convolution_power(f: &TruncatedSeries, j: u32) -> TruncatedSeries {
    let mut out = TruncatedSeries::unit(f.dims(), f.max_degree());
    for _ in 0..j {
        out = out.mul(f);
    }
    out
}

/// Enumeration of all exponent vectors of total degree `<= max_degree`,
/// grouped by degree, with dense ranks for the solver's power tables.
struct DegreeTable {
    indices: Vec<MultiIndex>,
    offsets: Vec<usize>,
    ranks: HashMap<MultiIndex, usize>,
    dims: usize,
}

impl DegreeTable {
    fn new(dims: usize, max_degree: u32) -> Self {
        let mut indices = Vec::new();
        let mut offsets = Vec::with_capacity(max_degree as usize + 2);
        for degree in 0..=max_degree {
            offsets.push(indices.len());
            compositions(dims, degree, &mut indices);
        }
        offsets.push(indices.len());
        let ranks = if dims == 1 {
            HashMap::new()
        } else {
            indices
                .iter()
                .enumerate()
                .map(|(r, i)| (i.clone(), r))
                .collect()
        };
        Self {
            indices,
            offsets,
            ranks,
            dims,
        }
    }

    fn len(&self) -> usize {
        self.indices.len()
    }

    fn index(&self, rank: usize) -> &MultiIndex {
        &self.indices[rank]
    }

    fn rank(&self, index: &MultiIndex) -> Option<usize> {
        if self.dims == 1 {
            let d = index.get(0) as usize;
            (d < self.len()).then_some(d)
        } else {
            self.ranks.get(index).copied()
        }
    }

    /// Ranks of all indices of the given total degree.
    fn degree_range(&self, degree: u32) -> std::ops::Range<usize> {
        self.offsets[degree as usize]..self.offsets[degree as usize + 1]
    }

    /// Ranks of all indices with total degree at most `degree`.
    fn prefix(&self, degree: u32) -> std::ops::Range<usize> {
        let end = (degree as usize + 1).min(self.offsets.len() - 1);
        0..self.offsets[end]
    }
}

/// All exponent vectors with the given total degree, appended in a fixed order.
fn compositions(dims: usize, degree: u32, out: &mut Vec<MultiIndex>) {
    fn rec(prefix: &mut Vec<u32>, remaining: u32, slots: usize, out: &mut Vec<MultiIndex>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(MultiIndex::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for c in 0..=remaining {
            prefix.push(c);
            rec(prefix, remaining - c, slots - 1, out);
            prefix.pop();
        }
    }
    let mut prefix = Vec::with_capacity(dims);
    rec(&mut prefix, degree, dims, out);
}

/// Pascal's triangle up to `n`, in f64 (exact for the small powers used here).
fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let mut row = vec![1.0; j + 1];
        for t in 1..j {
            row[t] = rows[j - 1][t - 1] + rows[j - 1][t];
        }
        rows.push(row);
    }
    rows
}

/// Powers `s^0 .. s^max_power` of a growing series, maintained under
/// single-monomial appends: adding `c v^l` sends `s^j` to
/// `sum_t C(j,t) c^t v^(t l) s^(j-t)`.
struct PowerLadder<'a> {
    table: &'a DegreeTable,
    max_degree: u32,
    powers: Vec<Vec<f64>>,
    binom: Vec<Vec<f64>>,
}

impl<'a> PowerLadder<'a> {
    fn new(table: &'a DegreeTable, max_degree: u32, max_power: usize, constant: f64) -> Self {
        let mut powers = vec![vec![0.0; table.len()]; max_power + 1];
        for (j, row) in powers.iter_mut().enumerate() {
            row[0] = constant.powi(j as i32);
        }
        Self {
            table,
            max_degree,
            powers,
            binom: binomials(max_power),
        }
    }

    fn value(&self, power: usize, rank: usize) -> f64 {
        self.powers[power][rank]
    }

    /// Appends the monomial `c v^l` to the underlying series.
    fn append(&mut self, l: &MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let degree = l.degree();
        for j in (1..self.powers.len()).rev() {
            let mut c_power = 1.0;
            for t in 1..=j as u32 {
                c_power *= c;
                let shift_degree = t * degree;
                if shift_degree > self.max_degree {
                    break;
                }
                let shift = l.scaled(t);
                let factor = self.binom[j][t as usize] * c_power;
                let (lower, upper) = self.powers.split_at_mut(j);
                let source = &lower[j - t as usize];
                let target = &mut upper[0];
                for rank in self.table.prefix(self.max_degree - shift_degree) {
                    let v = source[rank];
                    if v != 0.0 {
                        let idx = self.table.index(rank).plus(&shift);
                        if let Some(target_rank) = self.table.rank(&idx) {
                            target[target_rank] += factor * v;
                        }
                    }
                }
            }
        }
    }
}

/// Clamp rounding noise to zero, reject genuinely negative coefficients.
fn accept_coefficient(index: &MultiIndex, value: f64) -> Result<f64, SeriesError> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -NEGATIVE_CLAMP {
        Ok(0.0)
    } else {
        Err(SeriesError::NegativeCoefficient {
            index: index.clone(),
            value,
        })
    }
}

/// Solves for the crossing series to total degree `max_degree`: coefficient
/// at `l` is the sub-probability of extinction with exactly `l` tracked
/// jumps, starting from one particle. The constant term is the minimal root
/// of the untracked part alone.
pub fn crossing_series(
    law: &BranchingLaw,
    set: &CrossingSet,
    max_degree: u32,
) -> Result<TruncatedSeries, SeriesError> {
    validate(law, set).into_result()?;
    if max_degree < 1 {
        return Err(SeriesError::TruncationTooSmall);
    }
    let dims = set.len();
    let constant = min_root_at(law, set, &vec![0.0; dims])?.value;
    let denominator = law.eval_untracked_deriv(set, constant);
    if denominator.abs() <= DERIVATIVE_FLOOR {
        return Err(SeriesError::DegenerateDerivative { value: denominator });
    }

    let untracked: Vec<(usize, f64)> = law.support().filter(|&(j, _)| !set.contains(j)).collect();
    let tracked: Vec<(usize, f64, usize)> = law
        .support()
        .filter_map(|(k, b)| set.position(k).map(|pos| (k, b, pos)))
        .collect();

    let table = DegreeTable::new(dims, max_degree);
    let max_power = law.max_index();
    let mut ladder = PowerLadder::new(&table, max_degree, max_power, constant);
    let mut coeffs: Vec<(MultiIndex, f64)> = Vec::new();
    if constant != 0.0 {
        coeffs.push((MultiIndex::zero(dims), constant));
    }

    for degree in 1..=max_degree {
        let mut fresh: Vec<(usize, MultiIndex, f64)> = Vec::new();
        for rank in table.degree_range(degree) {
            let target = table.index(rank);
            let mut numerator = 0.0;
            // Untracked sum: the ladder holds powers of the series known to
            // strictly lower degree, so the unknown coefficient is already
            // masked out of it.
            for &(j, b) in &untracked {
                numerator += b * ladder.value(j, rank);
            }
            for &(k, b, pos) in &tracked {
                if let Some(reduced) = target.minus_unit(pos) {
                    let reduced_rank = table.rank(&reduced).expect("reduced index in table");
                    numerator += b * ladder.value(k, reduced_rank);
                }
            }
            let value = accept_coefficient(target, -numerator / denominator)?;
            fresh.push((rank, target.clone(), value));
        }
        for (_, index, value) in &fresh {
            ladder.append(index, *value);
            if *value != 0.0 {
                coeffs.push((index.clone(), *value));
            }
        }
    }
    Ok(TruncatedSeries::from_terms(dims, max_degree, coeffs))
}

/// Death-count fast path (tracked set `{0}`). The constant term vanishes,
/// so the recursion is triangular in plain convolution tables: the first
/// coefficient is `b_0 / -b_1` and each later one folds the offspring rates
/// against convolution powers of the prefix.
pub fn death_series(law: &BranchingLaw, max_degree: u32) -> Result<TruncatedSeries, SeriesError> {
    validate_law(law).into_result()?;
    if max_degree < 1 {
        return Err(SeriesError::TruncationTooSmall);
    }
    let total_rate = law.total_rate();
    let n = max_degree as usize;
    let offspring: Vec<(usize, f64)> = law.support().filter(|&(j, _)| j >= 2).collect();
    let max_power = offspring.last().map(|&(j, _)| j).unwrap_or(0);

    let mut rho = vec![0.0_f64; n + 1];
    rho[1] = law.rate(0) / total_rate;
    // conv[j][d] = coefficient of degree d in the j-th convolution power.
    let mut conv = vec![vec![0.0_f64; n + 1]; max_power + 1];
    if !conv.is_empty() {
        conv[0][0] = 1.0;
    }

    for d in 2..=n {
        for j in 2..=max_power.min(d) {
            let mut acc = 0.0;
            // Parts are at least degree 1 each, so the sum stops where the
            // remaining j-1 parts still fit.
            for t in 1..=(d - j + 1) {
                let lower = if j == 2 {
                    rho[d - t]
                } else {
                    conv[j - 1][d - t]
                };
                acc += rho[t] * lower;
            }
            conv[j][d] = acc;
        }
        let mut numerator = 0.0;
        for &(j, b) in &offspring {
            if j <= d {
                numerator += b * conv[j][d];
            }
        }
        let index = MultiIndex::new(vec![d as u32]);
        rho[d] = accept_coefficient(&index, numerator / total_rate)?;
    }

    Ok(TruncatedSeries::from_terms(
        1,
        max_degree,
        rho.into_iter()
            .enumerate()
            .map(|(d, v)| (MultiIndex::new(vec![d as u32]), v)),
    ))
}

/// Up-crossing fast path (tracked set `{m}`, `m >= 2`). The constant term
/// is the minimal root of the rate function with the `m` term removed, and
/// each step divides by the derivative of that reduced function there.
pub fn upcross_series(
    law: &BranchingLaw,
    m: usize,
    max_degree: u32,
) -> Result<TruncatedSeries, SeriesError> {
    let set = CrossingSet::new([m]);
    validate(law, &set).into_result()?;
    assert!(m >= 2, "up-crossing index must be at least 2");
    if max_degree < 1 {
        return Err(SeriesError::TruncationTooSmall);
    }
    let constant = min_root_at(law, &set, &[0.0])?.value;
    let denominator = law.eval_untracked_deriv(&set, constant);
    if denominator.abs() <= DERIVATIVE_FLOOR {
        return Err(SeriesError::DegenerateDerivative { value: denominator });
    }
    let b_m = law.rate(m);
    let n = max_degree as usize;
    let others: Vec<(usize, f64)> = law
        .support()
        .filter(|&(j, _)| j != 1 && j != m)
        .collect();
    let max_power = law.max_index();

    let table = DegreeTable::new(1, max_degree);
    let mut ladder = PowerLadder::new(&table, max_degree, max_power, constant);
    let mut rho = Vec::with_capacity(n + 1);
    rho.push(constant);
    let first = accept_coefficient(
        &MultiIndex::new(vec![1]),
        -b_m * constant.powi(m as i32) / denominator,
    )?;
    ladder.append(&MultiIndex::new(vec![1]), first);
    rho.push(first);

    for d in 2..=n {
        // Powers in the ladder only involve coefficients up to degree d-1,
        // which is exactly the masked sum the recursion needs.
        let mut numerator = b_m * ladder.value(m, d - 1);
        for &(j, b) in &others {
            numerator += b * ladder.value(j, d);
        }
        let index = MultiIndex::new(vec![d as u32]);
        let value = accept_coefficient(&index, -numerator / denominator)?;
        ladder.append(&index, value);
        rho.push(value);
    }

    Ok(TruncatedSeries::from_terms(
        1,
        max_degree,
        rho.into_iter()
            .enumerate()
            .map(|(d, v)| (MultiIndex::new(vec![d as u32]), v)),
    ))
}

/// Independent oracle for the cubic family `B(u) = 2q - 3pu + u^3`:
/// death-count coefficients computed only from the closed recursion obtained
/// by repeatedly differentiating the defining identity, never from the
/// general solver. Requires the conservation tie `3p = 2q + 1`.
pub fn cubic_death_series(p: f64, q: f64, max_degree: u32) -> Result<TruncatedSeries, SeriesError> {
    if !(p > 0.0 && q > 0.0) || (3.0 * p - (2.0 * q + 1.0)).abs() > 1e-12 * (3.0 * p) {
        return Err(SeriesError::NotCubicFamily);
    }
    if max_degree < 1 {
        return Err(SeriesError::TruncationTooSmall);
    }
    let n = max_degree as usize;
    let mut rho = vec![0.0_f64; n + 1];
    rho[1] = 2.0 * q / (3.0 * p);
    // rho[2] = 0 exactly.
    for target in 3..=n {
        let m = target - 1;
        let mut acc = 0.0;
        for k in 2..=(m.min(target - 1)) {
            let mut inner = 0.0;
            for i in 1..k {
                inner += rho[i] * rho[k - i];
            }
            acc += (m - k + 1) as f64 * rho[m - k + 1] * inner;
        }
        rho[target] = acc / (p * (m + 1) as f64);
    }
    Ok(TruncatedSeries::from_terms(
        1,
        max_degree,
        rho.into_iter()
            .enumerate()
            .map(|(d, v)| (MultiIndex::new(vec![d as u32]), v)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn birth_death(mu: f64, lambda: f64) -> BranchingLaw {
        BranchingLaw::from_pairs([(0, mu), (1, -(mu + lambda)), (2, lambda)])
    }

    fn cubic_law(p: f64, q: f64) -> BranchingLaw {
        BranchingLaw::from_pairs([(0, 2.0 * q), (1, -3.0 * p), (3, 1.0)])
    }

    #[test]
    fn convolution_power_zero_is_unit() {
        let f = TruncatedSeries::from_terms(
            1,
            4,
            [(MultiIndex::new(vec![1]), 0.5), (MultiIndex::new(vec![2]), 0.25)],
        );
        let unit = convolution_power(&f, 0);
        assert_eq!(unit.coefficient(&MultiIndex::zero(1)), 1.0);
        assert_eq!(unit.num_terms(), 1);
    }

    #[test]
    fn convolution_power_squares_single_term() {
        let f = TruncatedSeries::from_terms(2, 2, [(MultiIndex::unit(2, 0), 0.3)]);
        let sq = convolution_power(&f, 2);
        let expected = MultiIndex::new(vec![2, 0]);
        assert!((sq.coefficient(&expected) - 0.09).abs() <= 1e-15);
        assert_eq!(sq.num_terms(), 1);
    }

    #[test]
    fn convolution_power_of_death_series() {
        let series = death_series(&birth_death(1.0, 2.0), 4).unwrap();
        let squared = convolution_power(&series, 2);
        // First coefficient 1/3, so the square starts at degree 2 with 1/9.
        assert!((squared.coefficient(&MultiIndex::new(vec![2])) - 1.0 / 9.0).abs() <= 1e-15);
    }

    #[test]
    fn convolution_power_matches_manual_products() {
        let f = TruncatedSeries::from_terms(
            2,
            5,
            [
                (MultiIndex::new(vec![0, 0]), 0.2),
                (MultiIndex::new(vec![1, 0]), 0.4),
                (MultiIndex::new(vec![0, 2]), 0.1),
            ],
        );
        let mut manual = TruncatedSeries::unit(2, 5);
        for _ in 0..3 {
            manual = manual.mul(&f);
        }
        let fast = convolution_power(&f, 3);
        for (index, value) in manual.iter() {
            assert!((fast.coefficient(index) - value).abs() <= 1e-14);
        }
        assert_eq!(fast.num_terms(), manual.num_terms());
    }

    #[test]
    fn joint_series_closed_form_low_orders() {
        let law = birth_death(1.0, 1.0);
        let set = CrossingSet::new([0, 2]);
        let series = crossing_series(&law, &set, 8).unwrap();
        assert!((series.coefficient(&MultiIndex::new(vec![1, 0])) - 0.5).abs() <= 1e-14);
        assert!((series.coefficient(&MultiIndex::new(vec![2, 1])) - 0.125).abs() <= 1e-14);
        assert_eq!(series.coefficient(&MultiIndex::new(vec![2, 0])), 0.0);
        assert_eq!(series.coefficient(&MultiIndex::new(vec![0, 1])), 0.0);
    }

    #[test]
    fn death_series_first_coefficients() {
        let series = death_series(&birth_death(1.0, 2.0), 6).unwrap();
        assert!((series.coefficient(&MultiIndex::new(vec![1])) - 1.0 / 3.0).abs() <= 1e-15);
        assert!((series.coefficient(&MultiIndex::new(vec![2])) - 2.0 / 27.0).abs() <= 1e-15);
    }

    #[test]
    fn death_series_pure_death_is_point_mass() {
        let law = BranchingLaw::from_pairs([(0, 1.0), (1, -1.0)]);
        let series = death_series(&law, 10).unwrap();
        assert_eq!(series.coefficient(&MultiIndex::new(vec![1])), 1.0);
        for d in 2..=10 {
            assert_eq!(series.coefficient(&MultiIndex::new(vec![d])), 0.0);
        }
    }

    #[test]
    fn death_series_matches_general_solver() {
        let laws = [
            birth_death(1.0, 2.0),
            birth_death(2.0, 1.0),
            birth_death(1.0, 1.0),
            BranchingLaw::from_pairs([(0, 1.0), (1, -1.75), (2, 0.5), (3, 0.25)]),
            cubic_law(1.0, 1.0),
        ];
        let set = CrossingSet::new([0]);
        for law in &laws {
            let fast = death_series(law, 60).unwrap();
            let general = crossing_series(law, &set, 60).unwrap();
            for d in 0..=60u32 {
                let index = MultiIndex::new(vec![d]);
                assert!(
                    (fast.coefficient(&index) - general.coefficient(&index)).abs() <= 1e-12,
                    "degree {d} mismatch"
                );
            }
        }
    }

    #[test]
    fn upcross_series_closed_form() {
        let law = birth_death(1.0, 1.0);
        let series = upcross_series(&law, 2, 6).unwrap();
        assert!((series.coefficient(&MultiIndex::new(vec![0])) - 0.5).abs() <= 1e-14);
        assert!((series.coefficient(&MultiIndex::new(vec![1])) - 0.125).abs() <= 1e-14);
        assert!((series.coefficient(&MultiIndex::new(vec![2])) - 0.0625).abs() <= 1e-14);
    }

    #[test]
    fn upcross_series_closed_form_asymmetric_rates() {
        // Exact fractions for the subcritical pair (2, 1), computed from the
        // closed form (2n-1)!! 2^n mu^(n+1) lam^n / ((n+1)! (mu+lam)^(2n+1)).
        let series = upcross_series(&birth_death(2.0, 1.0), 2, 8).unwrap();
        let expected = [
            2.0 / 3.0,
            4.0 / 27.0,
            16.0 / 243.0,
            80.0 / 2187.0,
            448.0 / 19683.0,
            896.0 / 59049.0,
        ];
        for (d, want) in expected.iter().enumerate() {
            let got = series.coefficient(&MultiIndex::new(vec![d as u32]));
            assert!((got - want).abs() <= 1e-14, "degree {d}: {got} vs {want}");
        }
    }

    #[test]
    fn upcross_series_matches_general_solver() {
        let law = birth_death(1.0, 1.5);
        let set = CrossingSet::new([2]);
        let fast = upcross_series(&law, 2, 40).unwrap();
        let general = crossing_series(&law, &set, 40).unwrap();
        for d in 0..=40u32 {
            let index = MultiIndex::new(vec![d]);
            assert!((fast.coefficient(&index) - general.coefficient(&index)).abs() <= 1e-12);
        }
    }

    #[test]
    fn cubic_oracle_low_orders() {
        let series = cubic_death_series(1.0, 1.0, 6).unwrap();
        assert!((series.coefficient(&MultiIndex::new(vec![1])) - 2.0 / 3.0).abs() <= 1e-15);
        assert_eq!(series.coefficient(&MultiIndex::new(vec![2])), 0.0);
        // Hand-evaluated: the first nonzero coefficient past degree 1 is
        // (2/3)^3 / 3 at degree 3, and degree 4 vanishes again.
        assert!((series.coefficient(&MultiIndex::new(vec![3])) - 8.0 / 81.0).abs() <= 1e-15);
        assert_eq!(series.coefficient(&MultiIndex::new(vec![4])), 0.0);
    }

    #[test]
    fn cubic_oracle_rejects_broken_tie() {
        assert!(matches!(
            cubic_death_series(1.0, 2.0, 5),
            Err(SeriesError::NotCubicFamily)
        ));
    }

    #[test]
    fn cubic_oracle_matches_death_series() {
        for (p, q) in [(1.0, 1.0), (3.0, 4.0)] {
            let oracle = cubic_death_series(p, q, 40).unwrap();
            let direct = death_series(&cubic_law(p, q), 40).unwrap();
            for d in 0..=40u32 {
                let index = MultiIndex::new(vec![d]);
                let a = oracle.coefficient(&index);
                let b = direct.coefficient(&index);
                assert!(
                    (a - b).abs() <= 1e-12 + 1e-10 * a.abs(),
                    "degree {d}: oracle {a}, direct {b}"
                );
            }
        }
    }

    #[test]
    fn substitution_residual_shrinks_with_truncation() {
        let law = birth_death(1.0, 2.0);
        let set = CrossingSet::new([0, 2]);
        let mut rng = crate::rng::CounterRng::new(808, 0, 0);
        for _ in 0..6 {
            let v = [rng.next_f64() * 0.9, rng.next_f64() * 0.9];
            let mut residuals = Vec::new();
            for degree in [10, 20, 40, 80] {
                let series = crossing_series(&law, &set, degree).unwrap();
                let s = series.eval(&v);
                residuals.push(law.eval_split(&set, s, &v).unwrap().abs());
            }
            assert!(residuals[3] <= 1e-6, "v {v:?}: residuals {residuals:?}");
            for pair in residuals.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-15);
            }
        }
    }

    #[test]
    fn coefficients_are_nonnegative_and_bounded() {
        let law = birth_death(1.0, 2.0);
        let set = CrossingSet::new([0, 2]);
        let series = crossing_series(&law, &set, 30).unwrap();
        for (_, value) in series.iter() {
            assert!(value >= 0.0);
        }
        let rho = crate::roots::min_root(&law).unwrap().value;
        assert!(series.total_mass() <= rho + 1e-10);
        // Partial sums are nondecreasing in the truncation degree.
        let mut last = 0.0;
        for d in 0..=30 {
            let mass = series.mass_up_to(d);
            assert!(mass >= last);
            last = mass;
        }
    }

    #[test]
    fn vanishing_total_rate_degenerates_the_recursion() {
        let law = BranchingLaw::from_pairs([(0, 1e-12), (1, -1e-12)]);
        assert!(matches!(
            crossing_series(&law, &CrossingSet::new([0]), 5),
            Err(SeriesError::DegenerateDerivative { .. })
        ));
    }

    #[test]
    fn truncation_of_zero_is_rejected() {
        let law = birth_death(1.0, 2.0);
        assert!(matches!(
            death_series(&law, 0),
            Err(SeriesError::TruncationTooSmall)
        ));
        assert!(matches!(
            crossing_series(&law, &CrossingSet::new([0]), 0),
            Err(SeriesError::TruncationTooSmall)
        ));
    }

    #[test]
    fn multi_index_ordering_is_degree_major() {
        let a = MultiIndex::new(vec![0, 2]);
        let b = MultiIndex::new(vec![3, 0]);
        assert!(a < b);
        let c = MultiIndex::new(vec![1, 1]);
        assert!(a < c);
    }
}

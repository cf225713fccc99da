//! Covariate balance statistics.
//!
//! Per-covariate statistics (prevalence difference, standardized mean
//! difference, instrument bias) and the global Mahalanobis distance of the
//! mean-difference vector.
//!
//! The free functions compute each statistic directly from a covariate
//! column and an assignment. [`BalanceContext`] evaluates the same
//! quantities from per-group sufficient statistics, which is what the
//! randomization engine uses when it has to evaluate thousands of draws.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::data::AssignmentVector;

/// Relative eigenvalue cutoff for the covariance pseudo-inverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Within-group variance at or below this fraction of the column's squared
/// magnitude is treated as exactly zero.
const ZERO_VARIANCE_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatError {
    #[error("empty group: {n_treated} treated, {n_control} control")]
    EmptyGroup { n_treated: usize, n_control: usize },
    #[error("pooled covariance needs at least two units per group ({n_treated} treated, {n_control} control)")]
    TooFewUnits { n_treated: usize, n_control: usize },
    #[error("statistic undefined: {0}")]
    Undefined(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

impl StatError {
    /// True for per-draw degeneracies that are tallied rather than fatal.
    pub fn is_undefined(&self) -> bool {
        matches!(self, StatError::Undefined(_) | StatError::EmptyGroup { .. } | StatError::TooFewUnits { .. })
    }
}

/// Test statistics the randomization engine can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    PrevalenceDiff,
    Scmd,
    IvBias,
    Mahalanobis,
    SqrtMahalanobis,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 5] = [
        StatisticKind::PrevalenceDiff,
        StatisticKind::Scmd,
        StatisticKind::IvBias,
        StatisticKind::Mahalanobis,
        StatisticKind::SqrtMahalanobis,
    ];

    /// Global statistics produce one scalar; the rest one value per covariate.
    pub fn is_global(self) -> bool {
        matches!(self, StatisticKind::Mahalanobis | StatisticKind::SqrtMahalanobis)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StatisticKind::PrevalenceDiff => "prevalence_diff",
            StatisticKind::Scmd => "scmd",
            StatisticKind::IvBias => "iv_bias",
            StatisticKind::Mahalanobis => "mahalanobis",
            StatisticKind::SqrtMahalanobis => "sqrt_mahalanobis",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for StatisticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
            format!("unknown statistic '{s}' (expected one of: {})", names.join(", "))
        })
    }
}

/// How the instrument-strength denominator of the bias statistic is
/// obtained for permuted draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Computed once from the observed assignment and reused for every draw.
    #[default]
    FixedObserved,
    /// Recomputed for each draw from the exposure split by that draw.
    PerDraw,
}

/// A resolved bias denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasDenominator {
    Fixed(f64),
    PerDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceKind {
    PrevalenceDiff,
    Scmd,
    Bias,
}

/// One balance value per covariate; `None` marks an undefined entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceVector {
    pub kind: BalanceKind,
    pub per_covariate: Vec<Option<f64>>,
}

/// Global balance of the mean-difference vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalBalance {
    pub mahalanobis: f64,
    pub sqrt_mahalanobis: f64,
    pub covariance_rank: usize,
    pub pseudo_inverse_used: bool,
}

fn group_sizes(assignment: &AssignmentVector) -> Result<(usize, usize), StatError> {
    let (n1, n0) = (assignment.n_treated(), assignment.n_control());
    if n1 == 0 || n0 == 0 {
        return Err(StatError::EmptyGroup { n_treated: n1, n_control: n0 });
    }
    Ok((n1, n0))
}

fn check_len(column: &[f64], assignment: &AssignmentVector) -> Result<(), StatError> {
    if column.len() != assignment.len() {
        return Err(StatError::DimensionMismatch { expected: assignment.len(), found: column.len() });
    }
    Ok(())
}

fn group_means(column: &[f64], assignment: &AssignmentVector) -> (f64, f64) {
    let (mut s1, mut s0) = (0.0, 0.0);
    for (x, &t) in column.iter().zip(assignment.values()) {
        if t {
            s1 += x;
        } else {
            s0 += x;
        }
    }
    (s1 / assignment.n_treated() as f64, s0 / assignment.n_control() as f64)
}

/// Mean over treated units minus mean over control units.
pub fn prevalence_difference(column: &[f64], assignment: &AssignmentVector) -> Result<f64, StatError> {
    check_len(column, assignment)?;
    group_sizes(assignment)?;
    let (m1, m0) = group_means(column, assignment);
    Ok(m1 - m0)
}

fn max_abs(column: &[f64]) -> f64 {
    column.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn standardize(diff: f64, pooled_var: f64, magnitude: f64) -> Result<f64, StatError> {
    let floor = (ZERO_VARIANCE_RELATIVE * magnitude).powi(2);
    if pooled_var <= floor {
        if diff.abs() <= ZERO_VARIANCE_RELATIVE * magnitude {
            return Ok(0.0);
        }
        return Err(StatError::Undefined("zero pooled standard deviation"));
    }
    Ok(diff / pooled_var.sqrt())
}

/// Standardized covariate mean difference: the prevalence difference over
/// `sqrt((s1² + s0²) / 2)` with `N - 1` variance denominators.
///
/// When both groups have zero spread the result is `0` if the means agree
/// and [`StatError::Undefined`] otherwise.
pub fn scmd(column: &[f64], assignment: &AssignmentVector) -> Result<f64, StatError> {
    check_len(column, assignment)?;
    let (n1, n0) = group_sizes(assignment)?;
    if n1 < 2 || n0 < 2 {
        return Err(StatError::TooFewUnits { n_treated: n1, n_control: n0 });
    }
    let (m1, m0) = group_means(column, assignment);
    let (mut ss1, mut ss0) = (0.0, 0.0);
    for (x, &t) in column.iter().zip(assignment.values()) {
        if t {
            ss1 += (x - m1).powi(2);
        } else {
            ss0 += (x - m0).powi(2);
        }
    }
    let pooled = (ss1 / (n1 - 1) as f64 + ss0 / (n0 - 1) as f64) / 2.0;
    standardize(m1 - m0, pooled, max_abs(column))
}

/// Exposure prevalence difference across the assignment (instrument strength).
pub fn instrument_strength(exposure: &AssignmentVector, assignment: &AssignmentVector) -> Result<f64, StatError> {
    prevalence_difference(&exposure.as_f64(), assignment)
}

/// Covariate prevalence difference divided by the instrument strength.
pub fn iv_bias(
    column: &[f64],
    assignment: &AssignmentVector,
    exposure: &AssignmentVector,
    denominator: BiasDenominator,
) -> Result<f64, StatError> {
    let numerator = prevalence_difference(column, assignment)?;
    let denom = match denominator {
        BiasDenominator::Fixed(c) => c,
        BiasDenominator::PerDraw => instrument_strength(exposure, assignment)?,
    };
    if denom == 0.0 || !denom.is_finite() {
        return Err(StatError::Undefined("zero instrument strength"));
    }
    Ok(numerator / denom)
}

/// Per-covariate balance for every column of `covariates`.
pub fn balance_vector(
    covariates: &DMatrix<f64>,
    assignment: &AssignmentVector,
    kind: BalanceKind,
    exposure: &AssignmentVector,
    denominator: BiasDenominator,
) -> BalanceVector {
    let n = covariates.nrows();
    let data = covariates.as_slice();
    let per_covariate = (0..covariates.ncols())
        .map(|j| {
            let col = &data[j * n..(j + 1) * n];
            match kind {
                BalanceKind::PrevalenceDiff => prevalence_difference(col, assignment),
                BalanceKind::Scmd => scmd(col, assignment),
                BalanceKind::Bias => iv_bias(col, assignment, exposure, denominator),
            }
            .ok()
        })
        .collect();
    BalanceVector { kind, per_covariate }
}

/// Vector of treated-minus-control covariate means.
pub fn mean_difference(covariates: &DMatrix<f64>, assignment: &AssignmentVector) -> Result<DVector<f64>, StatError> {
    if covariates.nrows() != assignment.len() {
        return Err(StatError::DimensionMismatch { expected: assignment.len(), found: covariates.nrows() });
    }
    group_sizes(assignment)?;
    let n = covariates.nrows();
    let data = covariates.as_slice();
    Ok(DVector::from_iterator(
        covariates.ncols(),
        (0..covariates.ncols()).map(|j| {
            let (m1, m0) = group_means(&data[j * n..(j + 1) * n], assignment);
            m1 - m0
        }),
    ))
}

/// Estimated covariance of the mean-difference vector: the pooled
/// within-group sample covariance scaled by `1/N1 + 1/N0`.
pub fn mean_difference_covariance(
    covariates: &DMatrix<f64>,
    assignment: &AssignmentVector,
) -> Result<DMatrix<f64>, StatError> {
    if covariates.nrows() != assignment.len() {
        return Err(StatError::DimensionMismatch { expected: assignment.len(), found: covariates.nrows() });
    }
    let (n1, n0) = group_sizes(assignment)?;
    if n1 < 2 || n0 < 2 {
        return Err(StatError::TooFewUnits { n_treated: n1, n_control: n0 });
    }
    let (n, k) = covariates.shape();
    let data = covariates.as_slice();
    let means: Vec<(f64, f64)> = (0..k).map(|j| group_means(&data[j * n..(j + 1) * n], assignment)).collect();
    let mut scatter = DMatrix::zeros(k, k);
    let mut dev = vec![0.0; k];
    for i in 0..n {
        let t = assignment.is_treated(i);
        for j in 0..k {
            let m = if t { means[j].0 } else { means[j].1 };
            dev[j] = data[j * n + i] - m;
        }
        for a in 0..k {
            for b in a..k {
                scatter[(a, b)] += dev[a] * dev[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            scatter[(a, b)] = scatter[(b, a)];
        }
    }
    let factor = (1.0 / n1 as f64 + 1.0 / n0 as f64) / (n - 2) as f64;
    Ok(scatter * factor)
}

/// `diffᵀ cov⁺ diff` using a Moore–Penrose pseudo-inverse with eigenvalues
/// below `PINV_RELATIVE_CUTOFF × λ_max` discarded.
pub fn quadratic_form(diff: &DVector<f64>, cov: &DMatrix<f64>) -> GlobalBalance {
    let k = diff.len();
    let eig = SymmetricEigen::new(cov.clone());
    let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l));
    let cutoff = PINV_RELATIVE_CUTOFF * lambda_max;
    let mut value = 0.0;
    let mut rank = 0;
    if lambda_max > 0.0 {
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l > cutoff {
                rank += 1;
                let proj = eig.eigenvectors.column(i).dot(diff);
                value += proj * proj / l;
            }
        }
    }
    let value = value.max(0.0);
    GlobalBalance {
        mahalanobis: value,
        sqrt_mahalanobis: value.sqrt(),
        covariance_rank: rank,
        pseudo_inverse_used: rank < k,
    }
}

/// Mahalanobis distance of the covariate mean difference.
pub fn mahalanobis(covariates: &DMatrix<f64>, assignment: &AssignmentVector) -> Result<GlobalBalance, StatError> {
    let diff = mean_difference(covariates, assignment)?;
    let cov = mean_difference_covariance(covariates, assignment)?;
    Ok(quadratic_form(&diff, &cov))
}

/// Treated-group sums of the standardized covariates.
#[derive(Debug, Clone)]
pub struct GroupSums {
    pub n_treated: usize,
    pub n_control: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    /// Treated units with exposure = 1, when the context tracks an exposure.
    pub exposure_treated: usize,
}

/// Precomputed covariate summaries for evaluating balance statistics from
/// group sums alone.
///
/// Covariates are centered and scaled internally; prevalence differences
/// and biases are reported back on the original scale, while SCMD and the
/// Mahalanobis distance are scale-free.
#[derive(Debug, Clone)]
pub struct BalanceContext {
    n: usize,
    k: usize,
    rows: Vec<f64>,
    scale: Vec<f64>,
    magnitude: Vec<f64>,
    total: Vec<f64>,
    total_sq: Vec<f64>,
    cross: DMatrix<f64>,
    exposure: Option<Vec<bool>>,
    exposure_total: usize,
}

impl BalanceContext {
    pub fn new(covariates: &DMatrix<f64>, exposure: Option<&AssignmentVector>) -> Self {
        let (n, k) = covariates.shape();
        let data = covariates.as_slice();
        let mut scale = vec![1.0; k];
        let mut rows = vec![0.0; n * k];
        for j in 0..k {
            let col = &data[j * n..(j + 1) * n];
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            if lo == hi {
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            scale[j] = if sd > 0.0 { sd } else { 1.0 };
            for i in 0..n {
                rows[i * k + j] = (col[i] - mean) / scale[j];
            }
        }
        let mut total = vec![0.0; k];
        let mut total_sq = vec![0.0; k];
        let mut magnitude = vec![0.0_f64; k];
        let mut cross = DMatrix::zeros(k, k);
        for row in rows.chunks_exact(k.max(1)).take(n) {
            for a in 0..k {
                total[a] += row[a];
                total_sq[a] += row[a] * row[a];
                magnitude[a] = magnitude[a].max(row[a].abs());
                for b in a..k {
                    cross[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                cross[(a, b)] = cross[(b, a)];
            }
        }
        let exposure_vec = exposure.map(|e| e.values().to_vec());
        let exposure_total = exposure.map_or(0, |e| e.n_treated());
        Self { n, k, rows, scale, magnitude, total, total_sq, cross, exposure: exposure_vec, exposure_total }
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_covariates(&self) -> usize {
        self.k
    }

    pub fn group_sums(&self, assignment: &[bool]) -> GroupSums {
        let k = self.k;
        let mut sum = vec![0.0; k];
        let mut sum_sq = vec![0.0; k];
        let mut n_treated = 0;
        let mut exposure_treated = 0;
        for (i, &t) in assignment.iter().enumerate() {
            if !t {
                continue;
            }
            n_treated += 1;
            let row = &self.rows[i * k..(i + 1) * k];
            for ((s, q), &x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(row) {
                *s += x;
                *q += x * x;
            }
            if let Some(e) = &self.exposure {
                exposure_treated += e[i] as usize;
            }
        }
        GroupSums { n_treated, n_control: self.n - n_treated, sum, sum_sq, exposure_treated }
    }

    fn sizes(&self, g: &GroupSums) -> Result<(f64, f64), StatError> {
        if g.n_treated == 0 || g.n_control == 0 {
            return Err(StatError::EmptyGroup { n_treated: g.n_treated, n_control: g.n_control });
        }
        Ok((g.n_treated as f64, g.n_control as f64))
    }

    fn std_diff(&self, g: &GroupSums, j: usize, n1: f64, n0: f64) -> f64 {
        g.sum[j] / n1 - (self.total[j] - g.sum[j]) / n0
    }

    pub fn prevalence_differences(&self, g: &GroupSums) -> Result<Vec<f64>, StatError> {
        let (n1, n0) = self.sizes(g)?;
        Ok((0..self.k).map(|j| self.std_diff(g, j, n1, n0) * self.scale[j]).collect())
    }

    pub fn scmds(&self, g: &GroupSums) -> Result<Vec<Result<f64, StatError>>, StatError> {
        let (n1, n0) = self.sizes(g)?;
        if g.n_treated < 2 || g.n_control < 2 {
            return Err(StatError::TooFewUnits { n_treated: g.n_treated, n_control: g.n_control });
        }
        Ok((0..self.k)
            .map(|j| {
                let s1 = g.sum[j];
                let s0 = self.total[j] - s1;
                let q1 = g.sum_sq[j];
                let q0 = self.total_sq[j] - q1;
                let v1 = ((q1 - s1 * s1 / n1) / (n1 - 1.0)).max(0.0);
                let v0 = ((q0 - s0 * s0 / n0) / (n0 - 1.0)).max(0.0);
                standardize(self.std_diff(g, j, n1, n0), (v1 + v0) / 2.0, self.magnitude[j])
            })
            .collect())
    }

    /// Instrument strength of this draw against the tracked exposure.
    pub fn strength(&self, g: &GroupSums) -> Result<f64, StatError> {
        let (n1, n0) = self.sizes(g)?;
        if self.exposure.is_none() {
            return Err(StatError::Undefined("no exposure tracked"));
        }
        let e1 = g.exposure_treated as f64;
        let e0 = (self.exposure_total - g.exposure_treated) as f64;
        Ok(e1 / n1 - e0 / n0)
    }

    pub fn biases(&self, g: &GroupSums, denominator: BiasDenominator) -> Result<Vec<f64>, StatError> {
        let denom = match denominator {
            BiasDenominator::Fixed(c) => c,
            BiasDenominator::PerDraw => self.strength(g)?,
        };
        if denom == 0.0 || !denom.is_finite() {
            return Err(StatError::Undefined("zero instrument strength"));
        }
        Ok(self.prevalence_differences(g)?.into_iter().map(|d| d / denom).collect())
    }

    pub fn mahalanobis(&self, g: &GroupSums) -> Result<GlobalBalance, StatError> {
        let (n1, n0) = self.sizes(g)?;
        if g.n_treated < 2 || g.n_control < 2 {
            return Err(StatError::TooFewUnits { n_treated: g.n_treated, n_control: g.n_control });
        }
        let k = self.k;
        let s1 = DVector::from_column_slice(&g.sum);
        let s0 = DVector::from_iterator(k, (0..k).map(|j| self.total[j] - g.sum[j]));
        let diff = &s1 / n1 - &s0 / n0;
        let scatter = &self.cross - (&s1 * s1.transpose()) / n1 - (&s0 * s0.transpose()) / n0;
        let cov = scatter * ((1.0 / n1 + 1.0 / n0) / (self.n as f64 - 2.0));
        Ok(quadratic_form(&diff, &cov))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z(v: &[u8]) -> AssignmentVector {
        AssignmentVector::from_binary(v).unwrap()
    }

    #[test]
    fn prevalence_difference_examples() {
        assert_eq!(prevalence_difference(&[1.0, 2.0, 3.0, 4.0], &z(&[1, 1, 0, 0])).unwrap(), -2.0);
        assert_eq!(prevalence_difference(&[7.0; 4], &z(&[1, 0, 0, 1])).unwrap(), 0.0);
        assert_eq!(prevalence_difference(&[5.0, 5.0, 0.0, 0.0], &z(&[1, 0, 1, 0])).unwrap(), 0.0);
        assert!(matches!(prevalence_difference(&[1.0, 2.0], &z(&[1, 1])), Err(StatError::EmptyGroup { .. })));
    }

    #[test]
    fn scmd_examples() {
        assert_eq!(scmd(&[0.0, 2.0, 0.0, 2.0], &z(&[1, 1, 0, 0])).unwrap(), 0.0);
        // diff = 3, s1² = s0² = 2, standardizer = √2
        let v = scmd(&[4.0, 6.0, 1.0, 3.0], &z(&[1, 1, 0, 0])).unwrap();
        assert!((v - 3.0 / 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((v - 2.1213).abs() < 1e-4);
        assert_eq!(scmd(&[0.1; 6], &z(&[1, 1, 1, 0, 0, 0])).unwrap(), 0.0);
        assert_eq!(
            scmd(&[1.0, 1.0, 0.0, 0.0], &z(&[1, 1, 0, 0])),
            Err(StatError::Undefined("zero pooled standard deviation"))
        );
    }

    #[test]
    fn bias_examples() {
        // covariate diff 0.2, exposure diff 0.5
        let x = [0.2, 0.2, 0.0, 0.0];
        let zz = z(&[1, 1, 0, 0]);
        let d = z(&[1, 0, 0, 0]);
        assert!((iv_bias(&x, &zz, &d, BiasDenominator::PerDraw).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(iv_bias(&[3.0; 4], &zz, &d, BiasDenominator::Fixed(0.5)).unwrap(), 0.0);
        // Z = D: bias equals balance
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(iv_bias(&x, &zz, &zz, BiasDenominator::PerDraw).unwrap(), prevalence_difference(&x, &zz).unwrap());
        let d0 = z(&[1, 0, 1, 0]);
        assert!(iv_bias(&x, &zz, &d0, BiasDenominator::PerDraw).unwrap_err().is_undefined());
    }

    #[test]
    fn covariance_examples() {
        let cov =
            mean_difference_covariance(&DMatrix::from_column_slice(4, 1, &[0.0, 2.0, 0.0, 2.0]), &z(&[1, 1, 0, 0]))
                .unwrap();
        assert!((cov[(0, 0)] - 2.0).abs() < 1e-14);

        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 4.0, 3.0, 5.0, 5.0, 5.0, 5.0]);
        let cov = mean_difference_covariance(&x, &z(&[1, 1, 0, 0])).unwrap();
        assert_eq!(cov.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(cov[(0, 1)], 0.0);

        let x = DMatrix::from_column_slice(5, 2, &[1.0, 2.0, 4.0, 3.0, 7.0, 1.0, 2.0, 4.0, 3.0, 7.0]);
        let g = mahalanobis(&x, &z(&[1, 1, 0, 0, 1])).unwrap();
        assert_eq!(g.covariance_rank, 1);
        assert!(g.pseudo_inverse_used);

        assert!(matches!(
            mean_difference_covariance(&DMatrix::from_element(3, 1, 1.0), &z(&[1, 0, 0])),
            Err(StatError::TooFewUnits { .. })
        ));
    }

    #[test]
    fn mahalanobis_scalar_oracle() {
        // x=(4,6,1,3), z=(1,1,0,0): diff = 3, pooled s² = 2, var(diff) = 2·(1/2+1/2) = 2
        let x = DMatrix::from_column_slice(4, 1, &[4.0, 6.0, 1.0, 3.0]);
        let g = mahalanobis(&x, &z(&[1, 1, 0, 0])).unwrap();
        assert!((g.mahalanobis - 4.5).abs() < 1e-12);
        assert!((g.sqrt_mahalanobis - 4.5_f64.sqrt()).abs() < 1e-12);
        assert_eq!(g.covariance_rank, 1);
        assert!(!g.pseudo_inverse_used);

        let x = DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 1.0, 3.0]);
        assert_eq!(mahalanobis(&x, &z(&[1, 0, 1, 0])).unwrap().mahalanobis, 0.0);
    }

    #[test]
    fn pseudo_inverse_matches_reduced_basis() {
        let a = [0.3, 1.2, -0.7, 2.2, 0.1, -1.5, 0.9, 1.1];
        let b = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let dup: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let assignment = z(&[1, 0, 1, 1, 0, 0, 1, 0]);
        let full = DMatrix::from_iterator(8, 3, a.iter().chain(&b).chain(&dup).copied());
        let reduced = DMatrix::from_iterator(8, 2, a.iter().chain(&b).copied());
        let g_full = mahalanobis(&full, &assignment).unwrap();
        let g_red = mahalanobis(&reduced, &assignment).unwrap();
        assert_eq!(g_full.covariance_rank, 2);
        assert!((g_full.mahalanobis - g_red.mahalanobis).abs() <= 1e-8 * g_red.mahalanobis);
    }

    fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, Vec<bool>)> {
        (6usize..30, 1usize..5).prop_flat_map(|(n, k)| {
            (proptest::collection::vec(-10.0f64..10.0, n * k), proptest::collection::vec(any::<bool>(), n))
                .prop_filter("both groups need two units", |(_, z)| {
                    let t = z.iter().filter(|&&b| b).count();
                    t >= 2 && z.len() - t >= 2
                })
                .prop_map(move |(v, z)| (DMatrix::from_vec(n, k, v), z))
        })
    }

    proptest! {
        #[test]
        fn context_agrees_with_direct((x, zv) in matrix_strategy()) {
            let a = AssignmentVector::new(zv.clone());
            let ctx = BalanceContext::new(&x, None);
            let g = ctx.group_sums(&zv);
            let diffs = ctx.prevalence_differences(&g).unwrap();
            let scmds = ctx.scmds(&g).unwrap();
            let n = x.nrows();
            for j in 0..x.ncols() {
                let col = &x.as_slice()[j * n..(j + 1) * n];
                let direct = prevalence_difference(col, &a).unwrap();
                prop_assert!((diffs[j] - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
                let s = scmd(col, &a).unwrap();
                prop_assert!((scmds[j].clone().unwrap() - s).abs() <= 1e-8 * (1.0 + s.abs()));
            }
            let fast = ctx.mahalanobis(&g).unwrap();
            let direct = mahalanobis(&x, &a).unwrap();
            prop_assert_eq!(fast.covariance_rank, direct.covariance_rank);
            prop_assert!((fast.mahalanobis - direct.mahalanobis).abs() <= 1e-7 * (1.0 + direct.mahalanobis));
        }

        #[test]
        fn relabeling_negates_balance((x, zv) in matrix_strategy()) {
            let a = AssignmentVector::new(zv);
            let c = a.complement();
            let n = x.nrows();
            for j in 0..x.ncols() {
                let col = &x.as_slice()[j * n..(j + 1) * n];
                let d = prevalence_difference(col, &a).unwrap();
                prop_assert!((d + prevalence_difference(col, &c).unwrap()).abs() <= 1e-12 * (1.0 + d.abs()));
                let s = scmd(col, &a).unwrap();
                prop_assert!((s + scmd(col, &c).unwrap()).abs() <= 1e-12 * (1.0 + s.abs()));
            }
            let m = mahalanobis(&x, &a).unwrap().mahalanobis;
            prop_assert!((m - mahalanobis(&x, &c).unwrap().mahalanobis).abs() <= 1e-9 * (1.0 + m));
        }

        #[test]
        fn scmd_is_scale_free((x, zv) in matrix_strategy(), c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let a = AssignmentVector::new(zv);
            let n = x.nrows();
            let col = &x.as_slice()[..n];
            let scaled: Vec<f64> = col.iter().map(|v| c * v).collect();
            let s = scmd(col, &a).unwrap();
            prop_assert!((scmd(&scaled, &a).unwrap() - c.signum() * s).abs() <= 1e-9 * (1.0 + s.abs()));
        }
    }
}

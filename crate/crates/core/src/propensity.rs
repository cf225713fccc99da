//! Propensity scores by maximum-likelihood logistic regression.
//!
//! Fitting runs Newton/IRLS iterations on internally standardized
//! covariates with step halving, so the (penalized) deviance never
//! increases between iterations. Coefficients are reported on the original
//! covariate scale.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::data::AssignmentVector;

/// Predictions are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]`.
pub const CLAMP_EPS: f64 = 1e-6;

/// Standardized-coefficient magnitude above which a still-decreasing
/// deviance, or a saturated linear predictor, is taken as a sign of
/// separation.
const SEPARATION_COEF: f64 = 10.0;
/// Linear-predictor magnitude at which fitted probabilities are
/// numerically 0 or 1.
const SATURATED_ETA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropensityError {
    #[error("labels are constant; logistic regression needs both classes")]
    ConstantLabels,
    #[error("{n} units are too few for {k} covariates plus an intercept")]
    TooFewUnits { n: usize, k: usize },
    #[error(
        "rank-deficient design: covariate columns {columns:?} are constant or linearly dependent on earlier columns"
    )]
    RankDeficient { columns: Vec<usize> },
    #[error("dimension mismatch: expected {expected} covariates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("logistic fit did not converge after {iterations} iterations{}", if *.separation { " (separation detected; consider a ridge penalty)" } else { "" })]
    NotConverged { iterations: usize, separation: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the absolute change in deviance.
    pub tolerance: f64,
    /// L2 penalty on the standardized slope coefficients (intercept unpenalized).
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 100, tolerance: 1e-8, ridge: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityModel {
    /// Intercept first, then one slope per covariate, original scale.
    pub coefficients: Vec<f64>,
    /// Coefficients on the standardized design.
    pub standardized_coefficients: Vec<f64>,
    /// Per-covariate `(center, scale)` used internally.
    pub standardization: Vec<(f64, f64)>,
    pub converged: bool,
    pub n_iterations: usize,
    /// Unpenalized deviance at the returned coefficients.
    pub deviance: f64,
    /// Objective (deviance plus penalty) after each iteration, starting
    /// with the intercept-only start.
    pub deviance_trace: Vec<f64>,
    pub separation_flag: bool,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    pub values: Vec<f64>,
    pub n_clamped: usize,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn deviance(eta: &DVector<f64>, y: &[bool]) -> f64 {
    2.0 * eta.iter().zip(y).map(|(&e, &t)| if t { softplus(-e) } else { softplus(e) }).sum::<f64>()
}

fn penalty(beta: &DVector<f64>, ridge: f64) -> f64 {
    ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Columns that are constant or linearly dependent on the intercept and
/// earlier columns, found by an incremental Cholesky of the Gram matrix.
fn dependent_columns(design: &DMatrix<f64>) -> Vec<usize> {
    let gram = design.transpose() * design;
    let p = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut accepted: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..p {
        let mut row = vec![0.0; accepted.len()];
        for (a, &i) in accepted.iter().enumerate() {
            let mut s = gram[(j, i)];
            for (b, &ib) in accepted.iter().enumerate().take(a) {
                s -= row[b] * l[(i, ib)];
            }
            row[a] = s / l[(i, i)];
        }
        let resid = gram[(j, j)] - row.iter().map(|r| r * r).sum::<f64>();
        if resid <= 1e-10 * gram[(j, j)].max(f64::MIN_POSITIVE) {
            dependent.push(j);
            continue;
        }
        for (a, &i) in accepted.iter().enumerate() {
            l[(j, i)] = row[a];
        }
        l[(j, j)] = resid.sqrt();
        accepted.push(j);
    }
    // column 0 is the intercept
    dependent.into_iter().map(|j| j - 1).collect()
}

/// Fits `P(label = 1 | x)` by (optionally ridge-penalized) maximum likelihood.
///
/// Non-convergence is not an error: the model is returned with
/// `converged = false`, and `separation_flag` set when the coefficients
/// diverge while the deviance keeps falling or the fitted probabilities
/// saturate.
pub fn fit_logistic(
    covariates: &DMatrix<f64>,
    labels: &AssignmentVector,
    options: &FitOptions,
) -> Result<PropensityModel, PropensityError> {
    let (n, k) = covariates.shape();
    if labels.len() != n {
        return Err(PropensityError::DimensionMismatch { expected: n, found: labels.len() });
    }
    if !labels.is_nondegenerate() {
        return Err(PropensityError::ConstantLabels);
    }
    if n <= k + 1 {
        return Err(PropensityError::TooFewUnits { n, k });
    }
    let mut standardization = Vec::with_capacity(k);
    let mut design = DMatrix::from_element(n, k + 1, 1.0);
    for j in 0..k {
        let col = covariates.column(j);
        let center = col.mean();
        let sd = (col.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        standardization.push((center, scale));
        for i in 0..n {
            design[(i, j + 1)] = (col[i] - center) / scale;
        }
    }
    let dependent = dependent_columns(&design);
    if !dependent.is_empty() {
        return Err(PropensityError::RankDeficient { columns: dependent });
    }

    let y = labels.values();
    let yv = DVector::from_iterator(n, y.iter().map(|&t| t as u8 as f64));
    let ybar = labels.n_treated() as f64 / n as f64;
    let mut beta = DVector::zeros(k + 1);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = &design * &beta;
    let mut objective = deviance(&eta, y) + penalty(&beta, options.ridge);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut separating = false;
    let mut iterations = 0;

    for _ in 0..options.max_iter {
        iterations += 1;
        let p = eta.map(logistic);
        let w = p.map(|q| q * (1.0 - q));
        let mut gradient = design.transpose() * (&yv - &p);
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut hessian = design.transpose() * weighted;
        for j in 1..=k {
            hessian[(j, j)] += options.ridge;
            gradient[j] -= options.ridge * beta[j];
        }
        let Some(chol) = hessian.cholesky() else {
            break;
        };
        let step = chol.solve(&gradient);
        if step.iter().any(|s| !s.is_finite()) {
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        while scale > 1e-10 {
            let candidate = &beta + &step * scale;
            let cand_eta = &design * &candidate;
            let cand_obj = deviance(&cand_eta, y) + penalty(&candidate, options.ridge);
            if cand_obj <= objective {
                accepted = Some((candidate, cand_eta, cand_obj));
                break;
            }
            scale /= 2.0;
        }
        let change = match accepted {
            Some((b, e, obj)) => {
                let change = objective - obj;
                beta = b;
                eta = e;
                objective = obj;
                change
            }
            None => 0.0,
        };
        trace.push(objective);
        let still_decreasing = change > 1e-9 * objective;
        separating = beta.iter().skip(1).any(|b| b.abs() > SEPARATION_COEF)
            && (still_decreasing || eta.iter().any(|e| e.abs() > SATURATED_ETA));
        if change.abs() < options.tolerance && !separating {
            converged = true;
            break;
        }
    }
    let separation_flag = !converged && separating;

    let mut coefficients = vec![0.0; k + 1];
    coefficients[0] = beta[0];
    for j in 0..k {
        let (center, scale) = standardization[j];
        coefficients[j + 1] = beta[j + 1] / scale;
        coefficients[0] -= beta[j + 1] * center / scale;
    }
    Ok(PropensityModel {
        coefficients,
        standardized_coefficients: beta.iter().copied().collect(),
        standardization,
        converged,
        n_iterations: iterations,
        deviance: deviance(&eta, y),
        deviance_trace: trace,
        separation_flag,
        ridge: options.ridge,
    })
}

impl PropensityModel {
    pub fn n_covariates(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Returns an error unless the fit converged.
    pub fn require_converged(&self) -> Result<&Self, PropensityError> {
        if self.converged {
            Ok(self)
        } else {
            Err(PropensityError::NotConverged { iterations: self.n_iterations, separation: self.separation_flag })
        }
    }

    pub fn linear_predictor(&self, covariates: &DMatrix<f64>) -> Result<Vec<f64>, PropensityError> {
        if covariates.ncols() != self.n_covariates() {
            return Err(PropensityError::DimensionMismatch {
                expected: self.n_covariates(),
                found: covariates.ncols(),
            });
        }
        Ok((0..covariates.nrows())
            .map(|i| {
                self.coefficients[0]
                    + covariates.row(i).iter().zip(&self.coefficients[1..]).map(|(x, b)| x * b).sum::<f64>()
            })
            .collect())
    }

    /// Fitted probabilities without clamping.
    pub fn probabilities(&self, covariates: &DMatrix<f64>) -> Result<Vec<f64>, PropensityError> {
        Ok(self.linear_predictor(covariates)?.into_iter().map(logistic).collect())
    }
}

/// Inverse-logit predictions clamped into `[1e-6, 1 - 1e-6]`.
pub fn predict(model: &PropensityModel, covariates: &DMatrix<f64>) -> Result<Predictions, PropensityError> {
    let mut n_clamped = 0;
    let values = model
        .probabilities(covariates)?
        .into_iter()
        .map(|p| {
            let c = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            n_clamped += (c != p) as usize;
            c
        })
        .collect();
    Ok(Predictions { values, n_clamped })
}

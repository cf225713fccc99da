//! Instrument-versus-exposure comparison.
//!
//! Both vectors are tested against complete randomization; in addition,
//! Bernoulli-trial mechanisms built from fitted instrument and exposure
//! propensity scores give the balance one should expect from each
//! assignment process. The three √Mahalanobis distributions are placed on
//! a common scale and summarized by their quantile bands, histogram overlap
//! and mean gaps.

use std::fmt;

use serde::Serialize;

use crate::balance::{DenominatorMode, StatisticKind};
use crate::data::{Dataset, Target};
use crate::error::{Error, Result};
use crate::mechanism::{MechanismSpec, DEFAULT_MAX_REDRAWS};
use crate::propensity::{fit_logistic, predict, FitOptions, PropensityError, PropensityModel};
use crate::randtest::{run_test, TestConfig, TestError, TestResult, DEFAULT_ALPHA, DEFAULT_DRAWS};
use crate::summary::{mean, overlap_coefficient, quantile_sorted, sorted_copy, Histogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CaseLabel {
    Case1,
    Case2,
    Case3,
    Case4,
}

impl CaseLabel {
    pub fn recommendation(self) -> &'static str {
        match self {
            CaseLabel::Case1 => "Use IV analysis",
            CaseLabel::Case2 => "Reject IV analysis",
            CaseLabel::Case3 => "Use IV analysis or exposure analysis",
            CaseLabel::Case4 => "Compare balance or bias of D and Z",
        }
    }

    pub fn number(self) -> u8 {
        match self {
            CaseLabel::Case1 => 1,
            CaseLabel::Case2 => 2,
            CaseLabel::Case3 => 3,
            CaseLabel::Case4 => 4,
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Case {}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub case_label: CaseLabel,
    pub recommendation: &'static str,
    pub p_exposure: f64,
    pub p_instrument: f64,
    pub alpha: f64,
    pub reject_exposure: bool,
    pub reject_instrument: bool,
}

/// Maps the two as-if-randomization decisions to a study case.
///
/// | exposure | instrument | case |
/// |----------|------------|------|
/// | reject   | keep       | 1    |
/// | keep     | reject     | 2    |
/// | keep     | keep       | 3    |
/// | reject   | reject     | 4    |
pub fn classify_case(p_exposure: f64, p_instrument: f64, alpha: f64) -> Result<Classification, TestError> {
    for (name, p) in [("p_exposure", p_exposure), ("p_instrument", p_instrument)] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(TestError::Config(format!("{name} must lie in (0, 1], got {p}")));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TestError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let reject_exposure = p_exposure <= alpha;
    let reject_instrument = p_instrument <= alpha;
    let case_label = match (reject_exposure, reject_instrument) {
        (true, false) => CaseLabel::Case1,
        (false, true) => CaseLabel::Case2,
        (false, false) => CaseLabel::Case3,
        (true, true) => CaseLabel::Case4,
    };
    Ok(Classification {
        case_label,
        recommendation: case_label.recommendation(),
        p_exposure,
        p_instrument,
        alpha,
        reject_exposure,
        reject_instrument,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    /// The two `[q2.5, q97.5]` bands do not intersect.
    pub intervals_disjoint: bool,
    /// Histogram overlap coefficient on a shared binning.
    pub overlap_fraction: f64,
    pub mean_gap: f64,
}

fn band(values: &[f64]) -> (f64, f64) {
    let s = sorted_copy(values);
    (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
}

pub fn separation_diagnostics(a: &[f64], b: &[f64]) -> Result<Separation, TestError> {
    if a.is_empty() || b.is_empty() {
        return Err(TestError::EmptyDraws);
    }
    let (a_lo, a_hi) = band(a);
    let (b_lo, b_hi) = band(b);
    Ok(Separation {
        intervals_disjoint: a_hi < b_lo || b_hi < a_lo,
        overlap_fraction: overlap_coefficient(a, b),
        mean_gap: (mean(a) - mean(b)).abs(),
    })
}

/// A √Mahalanobis randomization distribution binned on the grid shared by
/// all three distributions of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub mechanism: String,
    pub histogram: Histogram,
    pub q025: f64,
    pub q975: f64,
    pub mean: f64,
    pub n_draws: usize,
    pub n_undefined_draws: usize,
    #[serde(skip)]
    pub draws: Vec<f64>,
}

impl DistributionSummary {
    fn from_test(test: &TestResult, edges: &[f64]) -> Self {
        let c = test.primary();
        Self {
            mechanism: format!("{}/{}", test.target, test.mechanism),
            histogram: Histogram::with_edges(&c.draws, edges.to_vec()),
            q025: c.q025,
            q975: c.q975,
            mean: c.mean,
            n_draws: c.n_effective_draws,
            n_undefined_draws: c.n_undefined_draws,
            draws: c.draws.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonSeparation {
    pub intervals_disjoint: bool,
    pub overlap_fraction: f64,
    /// Instrument band disjoint from the exposure band and the instrument
    /// distribution's mean closer to the complete-randomization mean.
    pub iv_closer: bool,
    pub instrument_vs_exposure: Separation,
    pub instrument_vs_complete: Separation,
    pub exposure_vs_complete: Separation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedPropensity {
    pub model: PropensityModel,
    pub ridge_fallback_used: bool,
    pub n_clamped: usize,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonConfig {
    pub n_draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub fit: FitOptions,
    /// Ridge penalty used to refit a propensity model that did not converge.
    pub ridge_fallback: Option<f64>,
    pub max_redraws: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            n_draws: DEFAULT_DRAWS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            fit: FitOptions::default(),
            ridge_fallback: None,
            max_redraws: DEFAULT_MAX_REDRAWS,
        }
    }
}

impl ComparisonConfig {
    pub fn test_config(&self) -> TestConfig {
        TestConfig {
            n_draws: self.n_draws,
            alpha: self.alpha,
            seed: self.seed,
            statistic: StatisticKind::SqrtMahalanobis,
            denominator: DenominatorMode::FixedObserved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub cr_distribution: DistributionSummary,
    pub iv_bt_distribution: DistributionSummary,
    pub exp_bt_distribution: DistributionSummary,
    /// √M of the observed instrument.
    pub observed_iv: f64,
    /// √M of the observed exposure.
    pub observed_exp: f64,
    pub p_iv: f64,
    pub p_exp: f64,
    /// Bernoulli-trial p-values of the observed vectors under their own
    /// fitted propensities.
    pub p_iv_bernoulli: f64,
    pub p_exp_bernoulli: f64,
    pub classification: Classification,
    pub separation: ComparisonSeparation,
    pub instrument_propensity: FittedPropensity,
    pub exposure_propensity: FittedPropensity,
    pub redraws: BernoulliRedraws,
    #[serde(skip)]
    pub instrument_cr_test: TestResult,
    #[serde(skip)]
    pub exposure_cr_test: TestResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernoulliRedraws {
    pub instrument: usize,
    pub exposure: usize,
}

/// Fits a propensity model, refitting with the fallback ridge penalty when
/// the plain fit fails to converge.
pub fn fit_propensity(
    dataset: &Dataset,
    target: Target,
    options: &FitOptions,
    ridge_fallback: Option<f64>,
) -> Result<FittedPropensity, PropensityError> {
    let labels = dataset.target(target);
    let mut model = fit_logistic(dataset.covariates(), labels, options)?;
    let mut used = false;
    if !model.converged {
        if let Some(ridge) = ridge_fallback {
            model = fit_logistic(dataset.covariates(), labels, &FitOptions { ridge, ..*options })?;
            used = true;
        }
    }
    model.require_converged()?;
    let p = predict(&model, dataset.covariates())?;
    Ok(FittedPropensity { model, ridge_fallback_used: used, n_clamped: p.n_clamped, scores: p.values })
}

/// Runs the full comparison: propensity fits, Bernoulli-trial draws for both
/// vectors, complete-randomization tests for both, separation diagnostics
/// and the case classification.
pub fn compare_mechanisms(dataset: &Dataset, config: &ComparisonConfig) -> Result<ComparisonResult> {
    let cfg = config.test_config();
    cfg.validate()?;
    let n = dataset.n_units();
    let fit_z = fit_propensity(dataset, Target::Instrument, &config.fit, config.ridge_fallback)?;
    let fit_d = fit_propensity(dataset, Target::Exposure, &config.fit, config.ridge_fallback)?;
    let bt_z = MechanismSpec::bernoulli(fit_z.scores.clone(), config.max_redraws)?;
    let bt_d = MechanismSpec::bernoulli(fit_d.scores.clone(), config.max_redraws)?;

    let cr_z = MechanismSpec::complete(n, dataset.instrument().n_treated())?;
    let cr_d = MechanismSpec::complete(n, dataset.exposure().n_treated())?;
    let instrument_cr_test = run_test(dataset, Target::Instrument, &cr_z, "complete", &cfg)?;
    let exposure_cr_test = run_test(dataset, Target::Exposure, &cr_d, "complete", &cfg)?;
    let iv_bt = run_test(dataset, Target::Instrument, &bt_z, "bernoulli", &cfg)?;
    let exp_bt = run_test(dataset, Target::Exposure, &bt_d, "bernoulli", &cfg)?;

    let cr_draws = &instrument_cr_test.primary().draws;
    let iv_draws = &iv_bt.primary().draws;
    let exp_draws = &exp_bt.primary().draws;
    let edges = Histogram::freedman_diaconis(&[cr_draws, iv_draws, exp_draws]);

    let iv_vs_exp = separation_diagnostics(iv_draws, exp_draws)?;
    let iv_vs_cr = separation_diagnostics(iv_draws, cr_draws)?;
    let exp_vs_cr = separation_diagnostics(exp_draws, cr_draws)?;
    let separation = ComparisonSeparation {
        intervals_disjoint: iv_vs_exp.intervals_disjoint,
        overlap_fraction: iv_vs_exp.overlap_fraction,
        iv_closer: iv_vs_exp.intervals_disjoint && iv_vs_cr.mean_gap < exp_vs_cr.mean_gap,
        instrument_vs_exposure: iv_vs_exp,
        instrument_vs_complete: iv_vs_cr,
        exposure_vs_complete: exp_vs_cr,
    };
    let p_iv = instrument_cr_test.p_value();
    let p_exp = exposure_cr_test.p_value();
    let classification = classify_case(p_exp, p_iv, config.alpha).map_err(Error::from)?;

    Ok(ComparisonResult {
        cr_distribution: DistributionSummary::from_test(&instrument_cr_test, &edges),
        iv_bt_distribution: DistributionSummary::from_test(&iv_bt, &edges),
        exp_bt_distribution: DistributionSummary::from_test(&exp_bt, &edges),
        observed_iv: instrument_cr_test.primary().observed,
        observed_exp: exposure_cr_test.primary().observed,
        p_iv,
        p_exp,
        p_iv_bernoulli: iv_bt.p_value(),
        p_exp_bernoulli: exp_bt.p_value(),
        classification,
        separation,
        instrument_propensity: fit_z,
        exposure_propensity: fit_d,
        redraws: BernoulliRedraws { instrument: iv_bt.total_redraws, exposure: exp_bt.total_redraws },
        instrument_cr_test,
        exposure_cr_test,
    })
}

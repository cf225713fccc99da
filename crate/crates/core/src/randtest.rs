//! Monte Carlo and exact randomization tests of `H0: target ~ mechanism`.
//!
//! The statistic is evaluated on the observed target vector and on draws
//! from the posited assignment mechanism. The p-value counts draws at least
//! as extreme in absolute value, plus one for the observed assignment:
//!
//! ```text
//! p = (1 + #{m : |t(z_m)| >= |t_obs|}) / (M + 1)
//! ```
//!
//! Draws are evaluated in parallel; draw `m` always comes from substream
//! `m`, and results are stored in draw order, so a run is bit-reproducible
//! for any thread count.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::balance::{BalanceContext, BiasDenominator, DenominatorMode, GroupSums, StatError, StatisticKind};
use crate::data::{AssignmentVector, Dataset, Target};
use crate::mechanism::{
    domain_tag, enumerate_complete, AssignmentSampler, DrawStream, MechanismError, DEFAULT_ENUMERATION_CAP,
};
use crate::summary::{mean, quantile_sorted, sorted_copy, Histogram};

pub const DEFAULT_DRAWS: usize = 10_000;
/// Smallest draw count recommended for a well-approximated randomization
/// distribution.
pub const MIN_ADVISORY_DRAWS: usize = 5_000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Draws within this relative distance below `|t_obs|` count as ties, so
/// assignments whose statistic equals the observed one in exact arithmetic
/// are not lost to rounding.
pub const TIE_RELATIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TestError {
    #[error("invalid test configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Statistic(#[from] StatError),
    #[error("no randomization draws to compare against")]
    EmptyDraws,
    #[error("observed statistic for '{component}' is undefined: {source}")]
    UndefinedObserved { component: String, source: StatError },
    #[error("every draw of '{component}' produced an undefined statistic")]
    AllUndefined { component: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestConfig {
    pub n_draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub statistic: StatisticKind,
    pub denominator: DenominatorMode,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            n_draws: DEFAULT_DRAWS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            statistic: StatisticKind::SqrtMahalanobis,
            denominator: DenominatorMode::FixedObserved,
        }
    }
}

impl TestConfig {
    pub fn with_statistic(self, statistic: StatisticKind) -> Self {
        Self { statistic, ..self }
    }

    pub fn validate(&self) -> Result<(), TestError> {
        if self.n_draws == 0 {
            return Err(TestError::Config("n_draws must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TestError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Randomization p-value with the observed assignment counted once.
pub fn pvalue(t_obs: f64, draws: &[f64]) -> Result<f64, TestError> {
    if draws.is_empty() {
        return Err(TestError::EmptyDraws);
    }
    if !t_obs.is_finite() {
        return Err(TestError::Config(format!("observed statistic must be finite, got {t_obs}")));
    }
    Ok((1 + count_extreme(t_obs, draws)) as f64 / (draws.len() + 1) as f64)
}

fn count_extreme(t_obs: f64, draws: &[f64]) -> usize {
    let threshold = t_obs.abs() * (1.0 - TIE_RELATIVE_TOLERANCE);
    draws.iter().filter(|t| t.abs() >= threshold).count()
}

/// Evaluates one statistic for arbitrary assignments of a fixed dataset.
#[derive(Debug, Clone)]
pub struct StatisticEvaluator {
    statistic: StatisticKind,
    context: BalanceContext,
    denominator: BiasDenominator,
    labels: Vec<String>,
}

impl StatisticEvaluator {
    /// Builds an evaluator for tests of `target`. For the bias statistic the
    /// denominator is resolved here: the observed instrument strength under
    /// [`DenominatorMode::FixedObserved`], and for exposure targets always 1
    /// (the exposure split by itself).
    pub fn new(
        dataset: &Dataset,
        target: Target,
        statistic: StatisticKind,
        mode: DenominatorMode,
    ) -> Result<Self, TestError> {
        let exposure = (statistic == StatisticKind::IvBias && target == Target::Instrument).then(|| dataset.exposure());
        let context = BalanceContext::new(dataset.covariates(), exposure);
        let denominator = match (statistic, target, mode) {
            (StatisticKind::IvBias, Target::Instrument, DenominatorMode::FixedObserved) => {
                let g = context.group_sums(dataset.instrument().values());
                let strength = context.strength(&g)?;
                if strength == 0.0 {
                    return Err(TestError::UndefinedObserved {
                        component: "instrument strength".into(),
                        source: StatError::Undefined("zero instrument strength"),
                    });
                }
                BiasDenominator::Fixed(strength)
            }
            (StatisticKind::IvBias, Target::Instrument, DenominatorMode::PerDraw) => BiasDenominator::PerDraw,
            _ => BiasDenominator::Fixed(1.0),
        };
        let labels = if statistic.is_global() {
            vec![statistic.as_str().to_string()]
        } else {
            dataset.covariate_names().to_vec()
        };
        Ok(Self { statistic, context, denominator, labels })
    }

    pub fn statistic(&self) -> StatisticKind {
        self.statistic
    }

    pub fn component_labels(&self) -> &[String] {
        &self.labels
    }

    pub fn denominator(&self) -> BiasDenominator {
        self.denominator
    }

    /// Per-component values for `assignment`; `Err` marks an undefined entry.
    pub fn evaluate(&self, assignment: &[bool]) -> Vec<Result<f64, StatError>> {
        let g = self.context.group_sums(assignment);
        self.evaluate_sums(&g)
    }

    fn evaluate_sums(&self, g: &GroupSums) -> Vec<Result<f64, StatError>> {
        let k = self.labels.len();
        let spread = |r: Result<Vec<f64>, StatError>| match r {
            Ok(v) => v.into_iter().map(Ok).collect(),
            Err(e) => vec![Err(e); k],
        };
        match self.statistic {
            StatisticKind::PrevalenceDiff => spread(self.context.prevalence_differences(g)),
            StatisticKind::Scmd => match self.context.scmds(g) {
                Ok(v) => v,
                Err(e) => vec![Err(e); k],
            },
            StatisticKind::IvBias => spread(self.context.biases(g, self.denominator)),
            StatisticKind::Mahalanobis => vec![self.context.mahalanobis(g).map(|m| m.mahalanobis)],
            StatisticKind::SqrtMahalanobis => vec![self.context.mahalanobis(g).map(|m| m.sqrt_mahalanobis)],
        }
    }
}

/// Outcome for one component (one covariate, or the global statistic).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentResult {
    pub label: String,
    pub observed: f64,
    pub p_value: f64,
    pub reject: bool,
    pub q025: f64,
    pub q975: f64,
    pub mean: f64,
    pub histogram: Histogram,
    pub n_effective_draws: usize,
    pub n_undefined_draws: usize,
    /// Defined draws in draw order.
    #[serde(skip)]
    pub draws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub target: Target,
    pub statistic: StatisticKind,
    pub mechanism: String,
    pub exact: bool,
    pub n_draws: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Degenerate draws rejected by the sampler (Bernoulli only).
    pub total_redraws: usize,
    pub components: Vec<ComponentResult>,
}

impl TestResult {
    /// The first (for global statistics, only) component.
    pub fn primary(&self) -> &ComponentResult {
        &self.components[0]
    }

    pub fn p_value(&self) -> f64 {
        self.primary().p_value
    }

    pub fn component(&self, label: &str) -> Option<&ComponentResult> {
        self.components.iter().find(|c| c.label == label)
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.p_value).collect()
    }
}

/// Domain label separating the random streams of different tests that
/// share one seed.
pub fn stream_domain(target: Target, mechanism: &str) -> u64 {
    domain_tag(&format!("{}/{}", target.as_str(), mechanism))
}

fn observed_values(evaluator: &StatisticEvaluator, observed: &AssignmentVector) -> Result<Vec<f64>, TestError> {
    evaluator
        .evaluate(observed.values())
        .into_iter()
        .zip(evaluator.component_labels())
        .map(|(r, label)| r.map_err(|source| TestError::UndefinedObserved { component: label.clone(), source }))
        .collect()
}

fn assemble(
    labels: &[String],
    observed: &[f64],
    per_draw: &[Vec<Result<f64, StatError>>],
    alpha: f64,
    exact: bool,
) -> Result<Vec<ComponentResult>, TestError> {
    labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let draws: Vec<f64> = per_draw.iter().filter_map(|d| d[j].as_ref().ok().copied()).collect();
            if draws.is_empty() {
                return Err(TestError::AllUndefined { component: label.clone() });
            }
            let t_obs = observed[j];
            let p_value =
                if exact { count_extreme(t_obs, &draws) as f64 / draws.len() as f64 } else { pvalue(t_obs, &draws)? };
            let sorted = sorted_copy(&draws);
            Ok(ComponentResult {
                label: label.clone(),
                observed: t_obs,
                p_value,
                reject: p_value <= alpha,
                q025: quantile_sorted(&sorted, 0.025),
                q975: quantile_sorted(&sorted, 0.975),
                mean: mean(&draws),
                histogram: Histogram::new(&draws),
                n_effective_draws: draws.len(),
                n_undefined_draws: per_draw.len() - draws.len(),
                draws,
            })
        })
        .collect()
}

/// Monte Carlo randomization test of `target` against `mechanism`.
///
/// Draw `m` is generated from the substream keyed by the seed, the target
/// and the mechanism label, so two runs that differ only in the statistic
/// see the same assignments.
pub fn run_test<S: AssignmentSampler + ?Sized>(
    dataset: &Dataset,
    target: Target,
    mechanism: &S,
    mechanism_label: &str,
    config: &TestConfig,
) -> Result<TestResult, TestError> {
    config.validate()?;
    if mechanism.n_units() != dataset.n_units() {
        return Err(MechanismError::LengthMismatch { expected: mechanism.n_units(), found: dataset.n_units() }.into());
    }
    let evaluator = StatisticEvaluator::new(dataset, target, config.statistic, config.denominator)?;
    let observed = observed_values(&evaluator, dataset.target(target))?;
    let stream = DrawStream::new(config.seed, stream_domain(target, mechanism_label));
    let results: Vec<(Vec<Result<f64, StatError>>, usize)> = (0..config.n_draws as u64)
        .into_par_iter()
        .map(|m| {
            let draw = mechanism.sample(&mut stream.rng(m))?;
            Ok((evaluator.evaluate(draw.assignment.values()), draw.redraws))
        })
        .collect::<Result<_, MechanismError>>()?;
    let total_redraws = results.iter().map(|r| r.1).sum();
    let per_draw: Vec<_> = results.into_iter().map(|r| r.0).collect();
    Ok(TestResult {
        target,
        statistic: config.statistic,
        mechanism: mechanism_label.to_string(),
        exact: false,
        n_draws: config.n_draws,
        seed: config.seed,
        alpha: config.alpha,
        total_redraws,
        components: assemble(evaluator.component_labels(), &observed, &per_draw, config.alpha, false)?,
    })
}

/// Exact randomization test over every complete-randomization assignment
/// with the observed treated count. The observed assignment is one of the
/// enumerated assignments, so the p-value is `#{|t(z)| >= |t_obs|} / C(N, N_T)`.
pub fn exact_test(
    dataset: &Dataset,
    target: Target,
    n_treated: Option<usize>,
    config: &TestConfig,
    cap: u128,
) -> Result<TestResult, TestError> {
    config.validate()?;
    let observed_assignment = dataset.target(target);
    let n_treated = n_treated.unwrap_or(observed_assignment.n_treated());
    if n_treated != observed_assignment.n_treated() {
        return Err(TestError::Config(format!(
            "exact test enumerates assignments with the observed treated count ({}), got {n_treated}",
            observed_assignment.n_treated()
        )));
    }
    let assignments: Vec<AssignmentVector> = enumerate_complete(dataset.n_units(), n_treated, cap)?.collect();
    let evaluator = StatisticEvaluator::new(dataset, target, config.statistic, config.denominator)?;
    let observed = observed_values(&evaluator, observed_assignment)?;
    let per_draw: Vec<_> = assignments.par_iter().map(|a| evaluator.evaluate(a.values())).collect();
    Ok(TestResult {
        target,
        statistic: config.statistic,
        mechanism: "complete".into(),
        exact: true,
        n_draws: assignments.len(),
        seed: config.seed,
        alpha: config.alpha,
        total_redraws: 0,
        components: assemble(evaluator.component_labels(), &observed, &per_draw, config.alpha, true)?,
    })
}

/// [`exact_test`] with the default enumeration cap.
pub fn exact_test_default(dataset: &Dataset, target: Target, config: &TestConfig) -> Result<TestResult, TestError> {
    exact_test(dataset, target, None, config, DEFAULT_ENUMERATION_CAP)
}

/// One row of a per-covariate quantile-band display: observed instrument and
/// exposure values against the randomization band of the tested target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateBand {
    pub covariate: String,
    pub observed_instrument: f64,
    pub observed_exposure: f64,
    pub q025: f64,
    pub q975: f64,
    pub p_value: f64,
    pub inside_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateBands {
    pub statistic: StatisticKind,
    pub rows: Vec<CovariateBand>,
    pub test: TestResult,
}

/// Per-covariate randomization bands of a finished per-covariate test, with
/// the observed instrument and exposure values marked.
///
/// The exposure's observed value uses the same statistic; for the bias
/// statistic that is the exposure's own balance, since its strength
/// against itself is 1.
pub fn covariate_bands(
    dataset: &Dataset,
    test: TestResult,
    denominator: DenominatorMode,
) -> Result<CovariateBands, TestError> {
    if test.statistic.is_global() {
        return Err(TestError::Config(format!("{} is not a per-covariate statistic", test.statistic)));
    }
    let observed_of = |t: Target| -> Result<Vec<f64>, TestError> {
        if t == test.target {
            return Ok(test.components.iter().map(|c| c.observed).collect());
        }
        let ev = StatisticEvaluator::new(dataset, t, test.statistic, denominator)?;
        observed_values(&ev, dataset.target(t))
    };
    let z_obs = observed_of(Target::Instrument)?;
    let d_obs = observed_of(Target::Exposure)?;
    let rows = test
        .components
        .iter()
        .enumerate()
        .map(|(j, c)| CovariateBand {
            covariate: c.label.clone(),
            observed_instrument: z_obs[j],
            observed_exposure: d_obs[j],
            q025: c.q025,
            q975: c.q975,
            p_value: c.p_value,
            inside_band: (c.q025..=c.q975).contains(&c.observed),
        })
        .collect();
    Ok(CovariateBands { statistic: test.statistic, rows, test })
}

/// Runs a per-covariate test and returns its [`covariate_bands`].
pub fn per_covariate_quantiles<S: AssignmentSampler + ?Sized>(
    dataset: &Dataset,
    target: Target,
    mechanism: &S,
    mechanism_label: &str,
    config: &TestConfig,
) -> Result<CovariateBands, TestError> {
    if config.statistic.is_global() {
        return Err(TestError::Config(format!("{} is not a per-covariate statistic", config.statistic)));
    }
    let test = run_test(dataset, target, mechanism, mechanism_label, config)?;
    covariate_bands(dataset, test, config.denominator)
}

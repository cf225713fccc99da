//! Synthetic datasets with known assignment processes.
//!
//! The covariate mixture is fixed: the first two covariates are standard
//! normal, the rest Bernoulli(0.3). A single confounder score
//!
//! ```text
//! s(x) = (1/√K) Σ_j (x_j - μ_j) / σ_j
//! ```
//!
//! (population moments) drives both assignment processes:
//!
//! * instrument: complete randomization of `⌊N/2⌋` units, or Bernoulli with
//!   `logit e_Z(x) = strength · s(x)`;
//! * exposure: Bernoulli with
//!   `logit e_D(x, z) = effect · (z - 1/2) + confounding · s(x)`.

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::data::{AssignmentVector, DataError, Dataset};
use crate::mechanism::{domain_tag, draw_complete, DrawStream};
use crate::propensity::logistic;

const N_CONTINUOUS: usize = 2;
const BINARY_PREVALENCE: f64 = 0.3;
const MAX_REGENERATIONS: u64 = 1_000;
const BOTH_CONFOUNDED_EXPOSURE: f64 = 1.43;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("generated {what} stayed degenerate after {attempts} attempts")]
    Degenerate { what: &'static str, attempts: u64 },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstrumentModel {
    Randomized,
    Confounded { strength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExposureModel {
    pub instrument_effect: f64,
    pub confounding_strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub n_units: usize,
    pub k_covariates: usize,
    pub instrument_model: InstrumentModel,
    pub exposure_model: ExposureModel,
    pub seed: u64,
}

/// Named scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Instrument and exposure both unconfounded.
    Null,
    /// Randomized instrument, exposure confounded with strength 2.
    ConfoundedExposure,
    /// Confounded instrument (strength 2), unconfounded exposure.
    ConfoundedInstrument,
    /// Confounded instrument (strength 2) with a relevant instrument
    /// (effect 2); the exposure's own confounding (1.43) makes its population
    /// imbalance match the instrument's.
    BothConfounded,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::Null, Scenario::ConfoundedExposure, Scenario::ConfoundedInstrument, Scenario::BothConfounded];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Null => "null",
            Scenario::ConfoundedExposure => "confounded-exposure",
            Scenario::ConfoundedInstrument => "confounded-instrument",
            Scenario::BothConfounded => "both-confounded",
        }
    }

    pub fn spec(self, n_units: usize, k_covariates: usize, seed: u64) -> ScenarioSpec {
        let (instrument_model, instrument_effect, confounding_strength) = match self {
            Scenario::Null => (InstrumentModel::Randomized, 1.0, 0.0),
            Scenario::ConfoundedExposure => (InstrumentModel::Randomized, 1.0, 2.0),
            Scenario::ConfoundedInstrument => (InstrumentModel::Confounded { strength: 2.0 }, 1.0, 0.0),
            Scenario::BothConfounded => (InstrumentModel::Confounded { strength: 2.0 }, 2.0, BOTH_CONFOUNDED_EXPOSURE),
        };
        ScenarioSpec {
            n_units,
            k_covariates,
            instrument_model,
            exposure_model: ExposureModel { instrument_effect, confounding_strength },
            seed,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|c| c.name()).collect();
            format!("unknown scenario '{s}' (valid scenarios: {})", names.join(", "))
        })
    }
}

/// Everything needed to recompute each unit's generating probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    /// Population `(mean, sd)` of each covariate.
    pub covariate_moments: Vec<(f64, f64)>,
    /// Weight of each standardized covariate in the confounder score.
    pub score_weights: Vec<f64>,
    pub instrument_intercept: f64,
    pub exposure_intercept: f64,
    pub instrument_regenerations: u64,
    pub exposure_regenerations: u64,
}

impl GroundTruth {
    pub fn confounder_score(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.covariate_moments).zip(&self.score_weights).map(|((x, (m, s)), w)| w * (x - m) / s).sum()
    }

    /// `P(Z = 1 | x)`; `None` under complete randomization.
    pub fn instrument_probability(&self, row: &[f64]) -> Option<f64> {
        match self.spec.instrument_model {
            InstrumentModel::Randomized => None,
            InstrumentModel::Confounded { strength } => {
                Some(logistic(self.instrument_intercept + strength * self.confounder_score(row)))
            }
        }
    }

    pub fn exposure_probability(&self, row: &[f64], instrument: bool) -> f64 {
        let e = self.spec.exposure_model;
        logistic(
            self.exposure_intercept
                + e.instrument_effect * instrument as u8 as f64
                + e.confounding_strength * self.confounder_score(row),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

impl Generated {
    /// Writes the dataset as comma-separated text and the ground truth as
    /// JSON.
    pub fn write(&self, data_path: impl AsRef<Path>, truth_path: impl AsRef<Path>) -> crate::error::Result<()> {
        let file = fs::File::create(data_path)?;
        self.dataset.write_delimited(BufWriter::new(file), b',')?;
        let mut json = serde_json::to_string_pretty(&self.truth)?;
        json.push('\n');
        fs::write(truth_path, json)?;
        Ok(())
    }
}

fn validate(spec: &ScenarioSpec) -> Result<(), SynthError> {
    if spec.n_units < 20 {
        return Err(SynthError::Invalid(format!("n_units must be at least 20, got {}", spec.n_units)));
    }
    if spec.k_covariates == 0 {
        return Err(SynthError::Invalid("k_covariates must be at least 1".into()));
    }
    let strengths = [
        match spec.instrument_model {
            InstrumentModel::Confounded { strength } => strength,
            InstrumentModel::Randomized => 0.0,
        },
        spec.exposure_model.instrument_effect,
        spec.exposure_model.confounding_strength,
    ];
    if strengths.iter().any(|s| !s.is_finite()) {
        return Err(SynthError::Invalid("strengths must be finite".into()));
    }
    Ok(())
}

pub fn covariate_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|j| if j < N_CONTINUOUS { format!("cont{}", j + 1) } else { format!("bin{}", j + 1 - N_CONTINUOUS) })
        .collect()
}

fn bernoulli_vector<R: Rng>(probabilities: &[f64], rng: &mut R) -> Vec<bool> {
    probabilities.iter().map(|&p| rng.random::<f64>() < p).collect()
}

fn nondegenerate<F: FnMut(u64) -> Vec<bool>>(
    what: &'static str,
    mut draw: F,
) -> Result<(AssignmentVector, u64), SynthError> {
    for attempt in 0..MAX_REGENERATIONS {
        let v = AssignmentVector::new(draw(attempt));
        if v.is_nondegenerate() {
            return Ok((v, attempt));
        }
    }
    Err(SynthError::Degenerate { what, attempts: MAX_REGENERATIONS })
}

/// Generates a dataset and its ground truth; a pure function of `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<Generated, SynthError> {
    validate(spec)?;
    let (n, k) = (spec.n_units, spec.k_covariates);
    let stream = |part: &str| DrawStream::new(spec.seed, domain_tag(&format!("synth/{part}")));

    let mut rng = stream("covariates").rng(0);
    let mut x = DMatrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            x[(i, j)] = if j < N_CONTINUOUS {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                (rng.random::<f64>() < BINARY_PREVALENCE) as u8 as f64
            };
        }
    }
    let covariate_moments: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            if j < N_CONTINUOUS {
                (0.0, 1.0)
            } else {
                (BINARY_PREVALENCE, (BINARY_PREVALENCE * (1.0 - BINARY_PREVALENCE)).sqrt())
            }
        })
        .collect();
    let truth_base = GroundTruth {
        spec: *spec,
        covariate_moments,
        score_weights: vec![1.0 / (k as f64).sqrt(); k],
        instrument_intercept: 0.0,
        exposure_intercept: -spec.exposure_model.instrument_effect / 2.0,
        instrument_regenerations: 0,
        exposure_regenerations: 0,
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();

    let z_stream = stream("instrument");
    let (z, z_regen) = match spec.instrument_model {
        InstrumentModel::Randomized => {
            let v = draw_complete(n, n / 2, &mut z_stream.rng(0)).expect("n >= 20");
            (v, 0)
        }
        InstrumentModel::Confounded { .. } => {
            let p: Vec<f64> = rows.iter().map(|r| truth_base.instrument_probability(r).unwrap()).collect();
            nondegenerate("instrument", |a| bernoulli_vector(&p, &mut z_stream.rng(a)))?
        }
    };
    let d_stream = stream("exposure");
    let p_d: Vec<f64> =
        rows.iter().enumerate().map(|(i, r)| truth_base.exposure_probability(r, z.is_treated(i))).collect();
    let (d, d_regen) = nondegenerate("exposure", |a| bernoulli_vector(&p_d, &mut d_stream.rng(a)))?;

    let dataset = Dataset::with_names(x, covariate_names(k), "z", "d", z, d)?;
    Ok(Generated {
        dataset,
        truth: GroundTruth { instrument_regenerations: z_regen, exposure_regenerations: d_regen, ..truth_base },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = Scenario::BothConfounded.spec(300, 4, 7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate(&Scenario::BothConfounded.spec(300, 4, 8)).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn covariate_mixture() {
        let g = generate(&Scenario::Null.spec(5_000, 5, 1)).unwrap();
        let ds = &g.dataset;
        assert_eq!(ds.covariate_names(), &["cont1", "cont2", "bin1", "bin2", "bin3"]);
        let means = ds.covariate_means();
        assert!(means[0].abs() < 0.06 && means[1].abs() < 0.06);
        for (j, mean) in means.iter().enumerate().skip(2) {
            assert!(ds.column(j).iter().all(|&v| v == 0.0 || v == 1.0));
            assert!((mean - 0.3).abs() < 0.03);
        }
        assert_eq!(ds.instrument().n_treated(), 2_500);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(generate(&Scenario::Null.spec(19, 3, 0)).is_err());
        assert!(generate(&Scenario::Null.spec(50, 0, 0)).is_err());
        let mut spec = Scenario::Null.spec(50, 3, 0);
        spec.exposure_model.confounding_strength = f64::NAN;
        assert!(generate(&spec).is_err());
        assert!("nope".parse::<Scenario>().unwrap_err().contains("confounded-exposure"));
    }

    #[test]
    fn zero_instrument_effect_gives_independent_vectors() {
        let mut spec = Scenario::Null.spec(4_000, 3, 5);
        spec.exposure_model.instrument_effect = 0.0;
        let ds = generate(&spec).unwrap().dataset;
        let z = ds.instrument().as_f64();
        let d = ds.exposure().as_f64();
        let n = z.len() as f64;
        let (mz, md) = (z.iter().sum::<f64>() / n, d.iter().sum::<f64>() / n);
        let cov: f64 = z.iter().zip(&d).map(|(a, b)| (a - mz) * (b - md)).sum::<f64>() / n;
        let r = cov / ((mz * (1.0 - mz)) * (md * (1.0 - md))).sqrt();
        assert!(r.abs() < 3.0 / n.sqrt(), "r = {r}");
    }

    #[test]
    fn truth_recomputes_generating_probabilities() {
        let g = generate(&Scenario::BothConfounded.spec(200, 4, 3)).unwrap();
        let ds = &g.dataset;
        let row: Vec<f64> = ds.covariates().row(17).iter().copied().collect();
        let s = g.truth.confounder_score(&row);
        let manual = (row[0] + row[1] + (row[2] - 0.3) / 0.21f64.sqrt() + (row[3] - 0.3) / 0.21f64.sqrt()) / 2.0;
        assert!((s - manual).abs() < 1e-12);
        assert!((g.truth.instrument_probability(&row).unwrap() - logistic(2.0 * manual)).abs() < 1e-15);
        let expected = logistic(-1.0 + 2.0 + BOTH_CONFOUNDED_EXPOSURE * manual);
        assert!((g.truth.exposure_probability(&row, true) - expected).abs() < 1e-15);
    }
}

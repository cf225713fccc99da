//! End-to-end pipeline and its self-describing report.
//!
//! A run produces one JSON document ([`RunReport`]) and, optionally, a
//! directory of delimited plot-data tables:
//!
//! | file | columns |
//! |------|---------|
//! | `propensity_histogram.csv` | model, group, bin_lower, bin_upper, count |
//! | `scmd.csv` | covariate, scmd_instrument, scmd_exposure, reference_threshold |
//! | `bands_<statistic>.csv` | covariate, observed_instrument, observed_exposure, q025, q975, p_value |
//! | `histograms_<statistic>.csv` | covariate, bin_lower, bin_upper, count |
//! | `mahalanobis_histograms.csv` | distribution, bin_lower, bin_upper, count |
//! | `mahalanobis_markers.csv` | marker, value |
//!
//! Everything except `metadata.timestamps` is a deterministic function of
//! the input bytes and the configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::balance::{scmd, DenominatorMode, StatisticKind};
use crate::compare::{
    classify_case, compare_mechanisms, Classification, ComparisonConfig, ComparisonResult, FittedPropensity,
};
use crate::data::{validate_dataset, DataError, Dataset, IngestOptions, RawTable, Target, Violation};
use crate::error::{Error, Result};
use crate::mechanism::{MechanismSpec, MechanismSummary, DEFAULT_ENUMERATION_CAP, DEFAULT_MAX_REDRAWS};
use crate::propensity::{FitOptions, PropensityModel};
use crate::randtest::{
    covariate_bands, exact_test, run_test, CovariateBands, TestConfig, TestResult, DEFAULT_ALPHA, DEFAULT_DRAWS,
};
use crate::summary::{mean, Histogram};

pub const SCHEMA_VERSION: &str = "1";
/// Rule-of-thumb SCMD reference line. Recorded for display only.
pub const SCMD_REFERENCE_THRESHOLD: f64 = 0.1;

pub const DEFAULT_STATISTICS: [StatisticKind; 3] =
    [StatisticKind::Scmd, StatisticKind::IvBias, StatisticKind::SqrtMahalanobis];

/// Mechanism posited for the per-covariate and global tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MechanismChoice {
    Complete,
    /// Complete randomization within the levels of a column, with the
    /// observed per-level treated counts.
    Block(String),
    /// Independent trials with fitted propensity scores.
    Bernoulli,
}

impl FromStr for MechanismChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "complete" => Ok(Self::Complete),
            "bernoulli" => Ok(Self::Bernoulli),
            _ => match s.strip_prefix("block:") {
                Some(col) if !col.is_empty() => Ok(Self::Block(col.to_string())),
                _ => Err(format!("unknown mechanism '{s}' (expected complete, block:COLUMN or bernoulli)")),
            },
        }
    }
}

/// Where the data come from and how to read them.
#[derive(Debug, Clone)]
pub struct InputSpec {
    pub path: PathBuf,
    pub instrument: String,
    pub exposure: String,
    /// Defaults to every remaining column.
    pub covariates: Option<Vec<String>>,
    pub ingest: IngestOptions,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub statistics: Vec<StatisticKind>,
    pub mechanism: MechanismChoice,
    pub n_draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub denominator: DenominatorMode,
    pub fit: FitOptions,
    pub ridge_fallback: Option<f64>,
    pub max_redraws: usize,
    /// Enumerate every assignment instead of sampling.
    pub exact: bool,
    pub enumeration_cap: u128,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            statistics: DEFAULT_STATISTICS.to_vec(),
            mechanism: MechanismChoice::Complete,
            n_draws: DEFAULT_DRAWS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            denominator: DenominatorMode::FixedObserved,
            fit: FitOptions::default(),
            ridge_fallback: None,
            max_redraws: DEFAULT_MAX_REDRAWS,
            exact: false,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl PipelineConfig {
    fn test_config(&self, statistic: StatisticKind) -> TestConfig {
        TestConfig {
            n_draws: self.n_draws,
            alpha: self.alpha,
            seed: self.seed,
            statistic,
            denominator: self.denominator,
        }
    }

    fn comparison_config(&self) -> ComparisonConfig {
        ComparisonConfig {
            n_draws: self.n_draws,
            alpha: self.alpha,
            seed: self.seed,
            fit: self.fit,
            ridge_fallback: self.ridge_fallback,
            max_redraws: self.max_redraws,
        }
    }

    /// Requested global statistics, always including √Mahalanobis, which
    /// drives the case classification.
    fn global_statistics(&self) -> Vec<StatisticKind> {
        let mut g: Vec<_> = self.statistics.iter().copied().filter(|s| s.is_global()).collect();
        if !g.contains(&StatisticKind::SqrtMahalanobis) {
            g.push(StatisticKind::SqrtMahalanobis);
        }
        g.dedup();
        g
    }

    fn covariate_statistics(&self) -> Vec<StatisticKind> {
        let mut c: Vec<_> = self.statistics.iter().copied().filter(|s| !s.is_global()).collect();
        c.dedup();
        c
    }
}

/// A validated dataset plus the block labels a block mechanism needs.
#[derive(Debug, Clone)]
pub struct LoadedInput {
    pub dataset: Dataset,
    pub block_labels: Option<Vec<String>>,
}

pub fn load_input(input: &InputSpec, mechanism: &MechanismChoice) -> Result<LoadedInput> {
    let raw = RawTable::from_path(&input.path, input.ingest.delimiter)?;
    let block_col = match mechanism {
        MechanismChoice::Block(c) => Some(c.as_str()),
        _ => None,
    };
    let covariates = match &input.covariates {
        Some(c) => c.clone(),
        None => {
            let mut exclude = vec![input.instrument.as_str(), input.exposure.as_str()];
            exclude.extend(block_col);
            raw.remaining_columns(&exclude)
        }
    };
    let dataset = validate_dataset(&raw, &input.instrument, &input.exposure, &covariates, &input.ingest)?;
    let block_labels = match block_col {
        None => None,
        Some(c) => {
            let idx = raw
                .column_index(c)
                .ok_or_else(|| DataError::Invalid(vec![Violation::MissingColumn { column: c.to_string() }]))?;
            Some(raw.rows.iter().map(|r| r[idx].trim().to_string()).collect())
        }
    };
    Ok(LoadedInput { dataset, block_labels })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputMetadata {
    pub path: String,
    pub instrument: String,
    pub exposure: String,
    pub delimiter: String,
    pub indicator_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismMetadata {
    pub instrument: MechanismSummary,
    pub exposure: MechanismSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub input: Option<InputMetadata>,
    pub seed: u64,
    pub n_draws: usize,
    pub alpha: f64,
    pub statistics: Vec<StatisticKind>,
    pub denominator: DenominatorMode,
    pub mechanism: MechanismMetadata,
    pub exact: bool,
    pub ridge_fallback: Option<f64>,
    pub timestamps: Timestamps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorSummary {
    pub name: String,
    pub n_treated: usize,
    pub n_control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateSummary {
    pub name: String,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_units: usize,
    pub n_covariates: usize,
    pub instrument: VectorSummary,
    pub exposure: VectorSummary,
    pub covariates: Vec<CovariateSummary>,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        let vector = |name: &str, t: Target| {
            let v = dataset.target(t);
            VectorSummary { name: name.to_string(), n_treated: v.n_treated(), n_control: v.n_control() }
        };
        Self {
            n_units: dataset.n_units(),
            n_covariates: dataset.n_covariates(),
            instrument: vector(dataset.instrument_name(), Target::Instrument),
            exposure: vector(dataset.exposure_name(), Target::Exposure),
            covariates: dataset
                .covariate_names()
                .iter()
                .zip(dataset.covariate_means())
                .map(|(name, mean)| CovariateSummary { name: name.clone(), mean })
                .collect(),
        }
    }
}

/// Fitted propensity scores split by the modelled vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensitySummary {
    pub target: Target,
    pub model: PropensityModel,
    pub ridge_fallback_used: bool,
    pub n_clamped: usize,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub histogram_treated: Histogram,
    pub histogram_control: Histogram,
}

impl PropensitySummary {
    fn new(dataset: &Dataset, target: Target, fit: &FittedPropensity) -> Self {
        let v = dataset.target(target);
        let mut treated = Vec::new();
        let mut control = Vec::new();
        for (i, &p) in fit.scores.iter().enumerate() {
            if v.is_treated(i) {
                treated.push(p)
            } else {
                control.push(p)
            }
        }
        let edges = Histogram::freedman_diaconis(&[&treated, &control]);
        Self {
            target,
            model: fit.model.clone(),
            ridge_fallback_used: fit.ridge_fallback_used,
            n_clamped: fit.n_clamped,
            mean_treated: mean(&treated),
            mean_control: mean(&control),
            histogram_treated: Histogram::with_edges(&treated, edges.clone()),
            histogram_control: Histogram::with_edges(&control, edges),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensitySummaries {
    pub instrument: PropensitySummary,
    pub exposure: PropensitySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScmdRow {
    pub covariate: String,
    /// `None` where the statistic is undefined.
    pub instrument: Option<f64>,
    pub exposure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScmdTable {
    pub reference_threshold: f64,
    pub rows: Vec<ScmdRow>,
}

impl ScmdTable {
    pub fn of(dataset: &Dataset) -> Self {
        let rows = (0..dataset.n_covariates())
            .map(|j| ScmdRow {
                covariate: dataset.covariate_names()[j].clone(),
                instrument: scmd(dataset.column(j), dataset.instrument()).ok(),
                exposure: scmd(dataset.column(j), dataset.exposure()).ok(),
            })
            .collect();
        Self { reference_threshold: SCMD_REFERENCE_THRESHOLD, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: &'static str,
    pub metadata: Metadata,
    pub dataset_summary: DatasetSummary,
    /// Absent for exact runs.
    pub propensity_summaries: Option<PropensitySummaries>,
    pub scmd_table: ScmdTable,
    /// Per-covariate bands of the instrument test, one entry per statistic.
    pub per_covariate_results: Vec<CovariateBands>,
    /// Global tests of the instrument and the exposure.
    pub global_results: Vec<TestResult>,
    /// Absent for exact runs.
    pub comparison: Option<ComparisonResult>,
    pub case_classification: Classification,
}

impl RunReport {
    pub fn global(&self, target: Target, statistic: StatisticKind) -> Option<&TestResult> {
        self.global_results.iter().find(|t| t.target == target && t.statistic == statistic)
    }

    pub fn covariate_results(&self, statistic: StatisticKind) -> Option<&CovariateBands> {
        self.per_covariate_results.iter().find(|b| b.statistic == statistic)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn build_mechanism(
    choice: &MechanismChoice,
    dataset: &Dataset,
    target: Target,
    block_labels: Option<&[String]>,
    scores: Option<&[f64]>,
    max_redraws: usize,
) -> Result<MechanismSpec> {
    let observed = dataset.target(target);
    Ok(match choice {
        MechanismChoice::Complete => MechanismSpec::complete(dataset.n_units(), observed.n_treated())?,
        MechanismChoice::Block(col) => {
            let labels = block_labels
                .ok_or_else(|| Error::Config(format!("block mechanism needs labels from column '{col}'")))?;
            MechanismSpec::block_from_observed(labels, observed)?
        }
        MechanismChoice::Bernoulli => {
            let scores = scores.ok_or_else(|| Error::Config("bernoulli mechanism needs propensity scores".into()))?;
            MechanismSpec::bernoulli(scores.to_vec(), max_redraws)?
        }
    })
}

/// Runs every test on an already validated dataset.
pub fn run_pipeline(
    input: &LoadedInput,
    config: &PipelineConfig,
    input_metadata: Option<InputMetadata>,
) -> Result<RunReport> {
    let started = unix_ms();
    let dataset = &input.dataset;
    if config.statistics.is_empty() {
        return Err(Error::Config("at least one statistic is required".into()));
    }
    if config.exact && config.mechanism != MechanismChoice::Complete {
        return Err(Error::Config("exact tests enumerate complete randomization only".into()));
    }
    config.test_config(StatisticKind::SqrtMahalanobis).validate()?;

    let comparison = if config.exact { None } else { Some(compare_mechanisms(dataset, &config.comparison_config())?) };
    let propensity_summaries = comparison.as_ref().map(|c| PropensitySummaries {
        instrument: PropensitySummary::new(dataset, Target::Instrument, &c.instrument_propensity),
        exposure: PropensitySummary::new(dataset, Target::Exposure, &c.exposure_propensity),
    });

    let mechanism_for = |target: Target| {
        let scores = comparison.as_ref().map(|c| match target {
            Target::Instrument => c.instrument_propensity.scores.as_slice(),
            Target::Exposure => c.exposure_propensity.scores.as_slice(),
        });
        build_mechanism(&config.mechanism, dataset, target, input.block_labels.as_deref(), scores, config.max_redraws)
    };
    let mech_z = mechanism_for(Target::Instrument)?;
    let mech_d = mechanism_for(Target::Exposure)?;
    let run = |target: Target, mech: &MechanismSpec, statistic: StatisticKind| -> Result<TestResult> {
        let cfg = config.test_config(statistic);
        Ok(if config.exact {
            exact_test(dataset, target, None, &cfg, config.enumeration_cap)?
        } else {
            run_test(dataset, target, mech, mech.label(), &cfg)?
        })
    };

    let mut per_covariate_results = Vec::new();
    for statistic in config.covariate_statistics() {
        let test = run(Target::Instrument, &mech_z, statistic)?;
        per_covariate_results.push(covariate_bands(dataset, test, config.denominator)?);
    }

    let mut global_results = Vec::new();
    for statistic in config.global_statistics() {
        for (target, mech) in [(Target::Instrument, &mech_z), (Target::Exposure, &mech_d)] {
            let reusable = match &comparison {
                Some(c)
                    if config.mechanism == MechanismChoice::Complete && statistic == StatisticKind::SqrtMahalanobis =>
                {
                    Some(match target {
                        Target::Instrument => c.instrument_cr_test.clone(),
                        Target::Exposure => c.exposure_cr_test.clone(),
                    })
                }
                _ => None,
            };
            global_results.push(match reusable {
                Some(t) => t,
                None => run(target, mech, statistic)?,
            });
        }
    }
    let p_of = |target: Target| {
        global_results
            .iter()
            .find(|t| t.target == target && t.statistic == StatisticKind::SqrtMahalanobis)
            .map(|t| t.p_value())
            .expect("sqrt_mahalanobis is always run")
    };
    let case_classification = classify_case(p_of(Target::Exposure), p_of(Target::Instrument), config.alpha)?;

    let metadata = Metadata {
        tool: "ivrt",
        tool_version: env!("CARGO_PKG_VERSION"),
        command: if config.exact { "exact" } else { "test" },
        input: input_metadata,
        seed: config.seed,
        n_draws: config.n_draws,
        alpha: config.alpha,
        statistics: config.statistics.clone(),
        denominator: config.denominator,
        mechanism: MechanismMetadata { instrument: mech_z.summary(), exposure: mech_d.summary() },
        exact: config.exact,
        ridge_fallback: config.ridge_fallback,
        timestamps: Timestamps { started_unix_ms: started, finished_unix_ms: unix_ms() },
    };
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        metadata,
        dataset_summary: DatasetSummary::of(dataset),
        propensity_summaries,
        scmd_table: ScmdTable::of(dataset),
        per_covariate_results,
        global_results,
        comparison,
        case_classification,
    })
}

/// Loads `input` and runs the pipeline on it.
pub fn run_from_file(input: &InputSpec, config: &PipelineConfig) -> Result<RunReport> {
    let loaded = load_input(input, &config.mechanism)?;
    let meta = InputMetadata {
        path: input.path.display().to_string(),
        instrument: input.instrument.clone(),
        exposure: input.exposure.clone(),
        delimiter: (input.ingest.delimiter as char).to_string(),
        indicator_columns: input.ingest.indicator_columns.clone(),
    };
    run_pipeline(&loaded, config, Some(meta))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_histogram<W: std::io::Write>(w: &mut csv::Writer<W>, label: &[&str], h: &Histogram) -> Result<()> {
    for (i, count) in h.counts.iter().enumerate() {
        let mut record: Vec<String> = label.iter().map(|s| s.to_string()).collect();
        record.extend([h.edges[i].to_string(), h.edges[i + 1].to_string(), count.to_string()]);
        w.write_record(&record).map_err(DataError::from)?;
    }
    Ok(())
}

fn csv_file(dir: &Path, name: &str, header: &[&str]) -> Result<(PathBuf, csv::Writer<fs::File>)> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(DataError::from)?;
    w.write_record(header).map_err(DataError::from)?;
    Ok((path, w))
}

fn finish(path: PathBuf, mut w: csv::Writer<fs::File>, written: &mut Vec<PathBuf>) -> Result<()> {
    w.flush()?;
    written.push(path);
    Ok(())
}

/// Writes the plot-data tables for `report` into `dir` and returns their
/// paths.
pub fn write_plot_data(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    if let Some(ps) = &report.propensity_summaries {
        let (path, mut w) =
            csv_file(dir, "propensity_histogram.csv", &["model", "group", "bin_lower", "bin_upper", "count"])?;
        for s in [&ps.instrument, &ps.exposure] {
            let model = s.target.as_str();
            write_histogram(&mut w, &[model, "treated"], &s.histogram_treated)?;
            write_histogram(&mut w, &[model, "control"], &s.histogram_control)?;
        }
        finish(path, w, &mut written)?;
    }

    let (path, mut w) =
        csv_file(dir, "scmd.csv", &["covariate", "scmd_instrument", "scmd_exposure", "reference_threshold"])?;
    for r in &report.scmd_table.rows {
        w.write_record([
            r.covariate.clone(),
            opt(r.instrument),
            opt(r.exposure),
            report.scmd_table.reference_threshold.to_string(),
        ])
        .map_err(DataError::from)?;
    }
    finish(path, w, &mut written)?;

    for bands in &report.per_covariate_results {
        let stat = bands.statistic.as_str();
        let (path, mut w) = csv_file(
            dir,
            &format!("bands_{stat}.csv"),
            &["covariate", "observed_instrument", "observed_exposure", "q025", "q975", "p_value"],
        )?;
        for r in &bands.rows {
            w.write_record([
                r.covariate.clone(),
                r.observed_instrument.to_string(),
                r.observed_exposure.to_string(),
                r.q025.to_string(),
                r.q975.to_string(),
                r.p_value.to_string(),
            ])
            .map_err(DataError::from)?;
        }
        finish(path, w, &mut written)?;

        let (path, mut w) =
            csv_file(dir, &format!("histograms_{stat}.csv"), &["covariate", "bin_lower", "bin_upper", "count"])?;
        for c in &bands.test.components {
            write_histogram(&mut w, &[&c.label], &c.histogram)?;
        }
        finish(path, w, &mut written)?;
    }

    let (path, mut w) =
        csv_file(dir, "mahalanobis_histograms.csv", &["distribution", "bin_lower", "bin_upper", "count"])?;
    let (mpath, mut m) = csv_file(dir, "mahalanobis_markers.csv", &["marker", "value"])?;
    let mut marker = |name: String, value: f64| m.write_record([name, value.to_string()]).map_err(DataError::from);
    match &report.comparison {
        Some(c) => {
            for (name, d) in [
                ("complete", &c.cr_distribution),
                ("instrument_bernoulli", &c.iv_bt_distribution),
                ("exposure_bernoulli", &c.exp_bt_distribution),
            ] {
                write_histogram(&mut w, &[name], &d.histogram)?;
                marker(format!("{name}_q025"), d.q025)?;
                marker(format!("{name}_q975"), d.q975)?;
                marker(format!("{name}_mean"), d.mean)?;
            }
            marker("observed_instrument".into(), c.observed_iv)?;
            marker("observed_exposure".into(), c.observed_exp)?;
        }
        None => {
            for t in report.global_results.iter().filter(|t| t.statistic == StatisticKind::SqrtMahalanobis) {
                let name = format!("{}_{}", t.target, t.mechanism);
                let c = t.primary();
                write_histogram(&mut w, &[&name], &c.histogram)?;
                marker(format!("{name}_q025"), c.q025)?;
                marker(format!("{name}_q975"), c.q975)?;
                marker(format!("observed_{}", t.target), c.observed)?;
            }
        }
    }
    finish(path, w, &mut written)?;
    finish(mpath, m, &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Scenario};

    fn small_config() -> PipelineConfig {
        PipelineConfig { n_draws: 200, seed: 11, ..Default::default() }
    }

    #[test]
    fn mechanism_choice_parsing() {
        assert_eq!("complete".parse::<MechanismChoice>().unwrap(), MechanismChoice::Complete);
        assert_eq!("block:site".parse::<MechanismChoice>().unwrap(), MechanismChoice::Block("site".into()));
        assert_eq!("bernoulli".parse::<MechanismChoice>().unwrap(), MechanismChoice::Bernoulli);
        assert!("block:".parse::<MechanismChoice>().is_err());
        assert!("coin".parse::<MechanismChoice>().is_err());
    }

    #[test]
    fn every_section_present() {
        let g = generate(&Scenario::ConfoundedExposure.spec(400, 4, 2)).unwrap();
        let input = LoadedInput { dataset: g.dataset, block_labels: None };
        let r = run_pipeline(&input, &small_config(), None).unwrap();
        assert_eq!(r.per_covariate_results.len(), 2);
        assert_eq!(r.global_results.len(), 2);
        assert!(r.comparison.is_some() && r.propensity_summaries.is_some());
        assert_eq!(r.scmd_table.reference_threshold, 0.1);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in [
            "schema_version",
            "metadata",
            "dataset_summary",
            "propensity_summaries",
            "scmd_table",
            "per_covariate_results",
            "global_results",
            "comparison",
            "case_classification",
        ] {
            assert!(!json[key].is_null(), "{key}");
        }
    }

    #[test]
    fn global_results_match_direct_run() {
        let g = generate(&Scenario::Null.spec(300, 3, 9)).unwrap();
        let ds = g.dataset.clone();
        let config = PipelineConfig { statistics: vec![StatisticKind::Mahalanobis], ..small_config() };
        let r = run_pipeline(&LoadedInput { dataset: g.dataset, block_labels: None }, &config, None).unwrap();
        for statistic in [StatisticKind::Mahalanobis, StatisticKind::SqrtMahalanobis] {
            let mech = MechanismSpec::complete(300, ds.instrument().n_treated()).unwrap();
            let direct = run_test(&ds, Target::Instrument, &mech, "complete", &config.test_config(statistic)).unwrap();
            assert_eq!(r.global(Target::Instrument, statistic).unwrap(), &direct);
        }
        let c = r.comparison.as_ref().unwrap();
        assert_eq!(c.p_iv, r.global(Target::Instrument, StatisticKind::SqrtMahalanobis).unwrap().p_value());
        assert_eq!(r.case_classification, c.classification);
    }

    #[test]
    fn block_and_bernoulli_mechanisms() {
        let g = generate(&Scenario::Null.spec(200, 3, 4)).unwrap();
        let labels: Vec<String> = (0..200).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let input = LoadedInput { dataset: g.dataset, block_labels: Some(labels) };
        let config = PipelineConfig { mechanism: MechanismChoice::Block("site".into()), ..small_config() };
        let r = run_pipeline(&input, &config, None).unwrap();
        assert!(matches!(r.metadata.mechanism.instrument, MechanismSummary::Block { .. }));
        let config = PipelineConfig { mechanism: MechanismChoice::Bernoulli, ..small_config() };
        let r = run_pipeline(&input, &config, None).unwrap();
        assert_eq!(r.global_results[0].mechanism, "bernoulli");
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ivrt::balance::{DenominatorMode, StatisticKind};
use ivrt::data::IngestOptions;
use ivrt::error::{Error, ErrorClass};
use ivrt::propensity::FitOptions;
use ivrt::report::{run_from_file, write_plot_data, InputSpec, MechanismChoice, PipelineConfig, DEFAULT_STATISTICS};
use ivrt::synth::{generate, InstrumentModel, Scenario};

#[derive(Parser)]
#[command(name = "ivrt", version, about = "Randomization tests for as-if random instruments and exposures")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "IVRT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo randomization tests plus the mechanism comparison.
    Test(RunArgs),
    /// Exact tests by enumerating every assignment (small data only).
    Exact(RunArgs),
    /// Generate a synthetic dataset with known assignment processes.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Delimited input file with a header row.
    data: PathBuf,
    #[arg(long)]
    instrument: String,
    #[arg(long)]
    exposure: String,
    /// Comma-separated covariate columns (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Covariates to expand into level indicators.
    #[arg(long, value_delimiter = ',')]
    indicator_columns: Vec<String>,
    /// Repeatable; default scmd, iv_bias and sqrt_mahalanobis.
    #[arg(long = "statistic")]
    statistics: Vec<StatisticKind>,
    /// complete, block:COLUMN or bernoulli.
    #[arg(long, default_value = "complete")]
    mechanism: MechanismChoice,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recompute the bias denominator for every draw.
    #[arg(long)]
    per_draw_denominator: bool,
    /// Ridge penalty for the propensity models.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Refit with this ridge penalty if a propensity model does not converge.
    #[arg(long)]
    ridge_fallback: Option<f64>,
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// Report path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for plot-data tables.
    #[arg(long)]
    plots_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "confounded-exposure")]
    scenario: String,
    #[arg(long, default_value_t = 2_000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the instrument's confounding strength (0 keeps it randomized).
    #[arg(long)]
    instrument_strength: Option<f64>,
    #[arg(long)]
    exposure_confounding: Option<f64>,
    #[arg(long)]
    instrument_effect: Option<f64>,
    /// Dataset path.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth path (default: dataset path with `.truth.json`).
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn pipeline_config(a: &RunArgs, exact: bool) -> Result<(InputSpec, PipelineConfig), Error> {
    if !a.delimiter.is_ascii() {
        return Err(Error::Config(format!("delimiter must be a single ASCII character, got '{}'", a.delimiter)));
    }
    let input = InputSpec {
        path: a.data.clone(),
        instrument: a.instrument.clone(),
        exposure: a.exposure.clone(),
        covariates: a.covariates.clone(),
        ingest: IngestOptions { delimiter: a.delimiter as u8, indicator_columns: a.indicator_columns.clone() },
    };
    let config = PipelineConfig {
        statistics: if a.statistics.is_empty() { DEFAULT_STATISTICS.to_vec() } else { a.statistics.clone() },
        mechanism: a.mechanism.clone(),
        n_draws: a.draws,
        alpha: a.alpha,
        seed: a.seed,
        denominator: if a.per_draw_denominator { DenominatorMode::PerDraw } else { DenominatorMode::FixedObserved },
        fit: FitOptions { ridge: a.ridge, ..FitOptions::default() },
        ridge_fallback: a.ridge_fallback,
        exact,
        ..PipelineConfig::default()
    };
    Ok((input, config))
}

fn run(a: &RunArgs, exact: bool) -> Result<(), Error> {
    let (input, config) = pipeline_config(a, exact)?;
    let report = run_from_file(&input, &config)?;
    match &a.out {
        Some(path) => report.write_json(path)?,
        None => print!("{}", report.to_json()?),
    }
    if let Some(dir) = &a.plots_dir {
        write_plot_data(&report, dir)?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), Error> {
    let scenario: Scenario = a.scenario.parse().map_err(Error::Config)?;
    let mut spec = scenario.spec(a.n, a.k, a.seed);
    if let Some(s) = a.instrument_strength {
        spec.instrument_model =
            if s == 0.0 { InstrumentModel::Randomized } else { InstrumentModel::Confounded { strength: s } };
    }
    if let Some(c) = a.exposure_confounding {
        spec.exposure_model.confounding_strength = c;
    }
    if let Some(e) = a.instrument_effect {
        spec.exposure_model.instrument_effect = e;
    }
    let generated = generate(&spec)?;
    let truth = a.truth.clone().unwrap_or_else(|| a.out.with_extension("truth.json"));
    generated.write(&a.out, truth)
}

fn fail(class: ErrorClass, message: String, details: Vec<String>) -> ExitCode {
    let line = json!({
        "error": class.as_str(),
        "exit_code": class.exit_code(),
        "message": message,
        "details": details,
    });
    eprintln!("{line}");
    ExitCode::from(class.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(ErrorClass::Input, e.kind().to_string(), vec![e.to_string().trim().to_string()]),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(ErrorClass::Input, format!("cannot configure {n} threads: {e}"), vec![]);
        }
    }
    let result = match &cli.command {
        Command::Test(a) => run(a, false),
        Command::Exact(a) => run(a, true),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let mut details: Vec<String> = match &e {
                Error::Data(d) => d.violations().iter().map(|v| v.to_string()).collect(),
                _ => Vec::new(),
            };
            if class == ErrorClass::CapExceeded {
                details.push("too many assignments to enumerate; use `ivrt test` for a Monte Carlo test".into());
            }
            fail(class, e.to_string(), details)
        }
    }
}

//! Randomization tests for whether an instrument, or an exposure, behaves as
//! if randomized with respect to measured covariates.

pub mod balance;
pub mod compare;
pub mod data;
pub mod error;
pub mod mechanism;
pub mod propensity;
pub mod randtest;
pub mod report;
pub mod summary;
pub mod synth;

pub use balance::{DenominatorMode, StatisticKind};
pub use compare::{classify_case, compare_mechanisms, CaseLabel, Classification, ComparisonConfig, ComparisonResult};
pub use data::{AssignmentVector, Dataset, IngestOptions, RawTable, Target};
pub use error::{Error, ErrorClass, Result};
pub use mechanism::{AssignmentSampler, MechanismSpec};
pub use propensity::{fit_logistic, FitOptions, PropensityModel};
pub use randtest::{exact_test, pvalue, run_test, TestConfig, TestResult};
pub use report::{run_from_file, run_pipeline, write_plot_data, InputSpec, MechanismChoice, PipelineConfig, RunReport};
pub use synth::{generate, Scenario, ScenarioSpec};

//! The complete pipeline: every test, the comparison, a JSON report and the
//! plot-data tables.

use ivrt::report::{run_pipeline, write_plot_data, LoadedInput, PipelineConfig};
use ivrt::synth::{generate, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate(&Scenario::ConfoundedExposure.spec(3_000, 6, 4))?.dataset;
    let config = PipelineConfig { n_draws: 2_000, seed: 9, ..Default::default() };
    let report = run_pipeline(&LoadedInput { dataset, block_labels: None }, &config, None)?;

    let dir = std::env::temp_dir().join("ivrt-report-example");
    std::fs::create_dir_all(&dir)?;
    report.write_json(dir.join("report.json"))?;
    for path in write_plot_data(&report, dir.join("plots"))? {
        println!("wrote {}", path.display());
    }
    for t in &report.global_results {
        println!("{} {}: p = {:.4}", t.target, t.statistic, t.p_value());
    }
    let c = &report.case_classification;
    println!("{}: {}", c.case_label, c.recommendation);
    Ok(())
}

//! Exact randomization p-values for a small design, compared with the Monte
//! Carlo approximation.

use ivrt::balance::StatisticKind;
use ivrt::mechanism::MechanismSpec;
use ivrt::randtest::{exact_test_default, run_test, TestConfig};
use ivrt::{Dataset, Target};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = [[61.0, 1.0], [54.0, 0.0], [70.0, 1.0], [66.0, 0.0], [49.0, 0.0], [58.0, 1.0], [73.0, 1.0], [52.0, 0.0]];
    let rows: Vec<Vec<f64>> = x.iter().map(|r| r.to_vec()).collect();
    let ds = Dataset::from_rows(
        &rows,
        vec!["age".into(), "smoker".into()],
        &[1, 0, 1, 1, 0, 0, 1, 0],
        &[1, 0, 1, 0, 0, 1, 1, 0],
    )?;

    for statistic in [StatisticKind::Scmd, StatisticKind::SqrtMahalanobis] {
        let config = TestConfig { n_draws: 20_000, seed: 1, ..Default::default() }.with_statistic(statistic);
        let exact = exact_test_default(&ds, Target::Instrument, &config)?;
        let mc = run_test(&ds, Target::Instrument, &MechanismSpec::complete(8, 4)?, "complete", &config)?;
        println!("{statistic} over {} assignments", exact.n_draws);
        for (e, m) in exact.components.iter().zip(&mc.components) {
            println!("  {:16} exact p = {:.4}  monte carlo p = {:.4}", e.label, e.p_value, m.p_value);
        }
    }
    Ok(())
}

//! Synthetic datasets with known assignment processes, written to disk and
//! read back.

use ivrt::data::{validate_dataset, IngestOptions, RawTable};
use ivrt::synth::{generate, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("ivrt-synthetic-example");
    std::fs::create_dir_all(&dir)?;
    for scenario in Scenario::ALL {
        let g = generate(&scenario.spec(500, 4, 1))?;
        let data = dir.join(format!("{scenario}.csv"));
        g.write(&data, dir.join(format!("{scenario}.truth.json")))?;

        let raw = RawTable::from_path(&data, b',')?;
        let covariates = raw.remaining_columns(&["z", "d"]);
        let back = validate_dataset(&raw, "z", "d", &covariates, &IngestOptions::default())?;
        assert_eq!(back, g.dataset);

        let row: Vec<f64> = g.dataset.covariates().row(0).iter().copied().collect();
        println!(
            "{scenario:22} N_T(z) = {:3}  N_T(d) = {:3}  unit 0: P(z=1) = {}  P(d=1|z=1) = {:.3}",
            g.dataset.instrument().n_treated(),
            g.dataset.exposure().n_treated(),
            g.truth.instrument_probability(&row).map_or("n/a".into(), |p| format!("{p:.3}")),
            g.truth.exposure_probability(&row, true),
        );
    }
    println!("files in {}", dir.display());
    Ok(())
}

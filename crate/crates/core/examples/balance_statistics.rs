//! Per-covariate balance, IV bias and the Mahalanobis distance for a
//! confounded exposure and a randomized instrument.

use ivrt::balance::{balance_vector, instrument_strength, mahalanobis, BalanceKind, BiasDenominator};
use ivrt::synth::{generate, Scenario};
use ivrt::Target;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate(&Scenario::ConfoundedExposure.spec(2_000, 4, 1))?.dataset;
    println!("instrument strength: {:.4}", instrument_strength(ds.exposure(), ds.instrument())?);
    for target in [Target::Instrument, Target::Exposure] {
        let a = ds.target(target);
        let x = ds.covariates();
        let scmd = balance_vector(x, a, BalanceKind::Scmd, ds.exposure(), BiasDenominator::PerDraw);
        let bias = balance_vector(x, a, BalanceKind::Bias, ds.exposure(), BiasDenominator::PerDraw);
        let m = mahalanobis(x, a)?;
        println!("{target}: N_T = {}, sqrt Mahalanobis = {:.3}", a.n_treated(), m.sqrt_mahalanobis);
        for (j, name) in ds.covariate_names().iter().enumerate() {
            println!(
                "  {name:6} scmd {:>8.4}  bias {:>8.4}",
                scmd.per_covariate[j].unwrap_or(f64::NAN),
                bias.per_covariate[j].unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

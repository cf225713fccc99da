//! Logistic propensity models for the instrument and the exposure.

use ivrt::propensity::{fit_logistic, predict, FitOptions};
use ivrt::synth::{generate, Scenario};
use ivrt::Target;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = generate(&Scenario::BothConfounded.spec(5_000, 3, 2))?;
    let ds = &g.dataset;
    println!("score weights used to generate the data: {:?}", g.truth.score_weights);
    for target in [Target::Instrument, Target::Exposure] {
        let model = fit_logistic(ds.covariates(), ds.target(target), &FitOptions::default())?;
        let p = predict(&model, ds.covariates())?;
        println!(
            "{target}: converged {} after {} iterations, deviance {:.2}",
            model.converged, model.n_iterations, model.deviance
        );
        println!("  coefficients (intercept first): {:?}", model.coefficients);
        let mean = p.values.iter().sum::<f64>() / p.values.len() as f64;
        println!("  mean score {mean:.4}, clamped {}", p.n_clamped);
    }
    Ok(())
}

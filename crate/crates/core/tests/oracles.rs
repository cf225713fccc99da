mod common;

use nalgebra::DMatrix;
use num::{BigInt, BigRational, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ivrt::balance::StatisticKind;
use ivrt::compare::{classify_case, compare_mechanisms, separation_diagnostics, ComparisonConfig};
use ivrt::mechanism::{domain_tag, draw_block, AssignmentSampler, DrawStream, MechanismSpec};
use ivrt::propensity::{fit_logistic, predict, FitOptions};
use ivrt::randtest::{exact_test_default, per_covariate_quantiles, run_test, TestConfig};
use ivrt::summary::{quantile_sorted, sorted_copy};
use ivrt::synth::{generate, InstrumentModel, Scenario};
use ivrt::{AssignmentVector, Dataset, Target};

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
}

fn mask(a: &AssignmentVector) -> usize {
    a.values().iter().enumerate().fold(0, |acc, (i, &b)| acc | (b as usize) << i)
}

#[test]
fn complete_sampler_passes_chi_square() {
    let stream = DrawStream::new(3, domain_tag("oracle/complete"));
    let mech = MechanismSpec::complete(6, 3).unwrap();
    let mut counts = [0u64; 64];
    let draws = 40_000u64;
    for m in 0..draws {
        counts[mask(&mech.sample(&mut stream.rng(m)).unwrap().assignment)] += 1;
    }
    let expected = draws as f64 / 20.0;
    let chi2: f64 =
        (0..64usize).filter(|m| m.count_ones() == 3).map(|m| (counts[m] as f64 - expected).powi(2) / expected).sum();
    // 19 degrees of freedom; 0.999 quantile is 43.82.
    assert!(chi2 < 43.82, "chi2 = {chi2}");
}

#[test]
fn block_sampler_matches_enumeration() {
    let labels: Vec<String> = ["A", "A", "A", "B", "B", "B"].iter().map(|s| s.to_string()).collect();
    let counts_per_block = [("A".to_string(), 1), ("B".to_string(), 1)];
    let stream = DrawStream::new(4, domain_tag("oracle/block"));
    let mut counts = [0u64; 64];
    let draws = 90_000u64;
    for m in 0..draws {
        let a = draw_block(&labels, &counts_per_block, &mut stream.rng(m)).unwrap();
        counts[mask(&a)] += 1;
    }
    let support: Vec<usize> = (0..3).flat_map(|a| (3..6).map(move |b| (1 << a) | (1 << b))).collect();
    assert_eq!(support.len(), 9);
    assert_eq!(support.iter().map(|&m| counts[m]).sum::<u64>(), draws);
    for m in support {
        let f = counts[m] as f64 / draws as f64;
        assert!((f - 1.0 / 9.0).abs() <= 0.006, "mask {m:b}: {f}");
    }
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

#[test]
fn predictions_match_exact_rational_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 2_000;
    let x = normal_matrix(&mut rng, n, 4) * 3.0;
    let labels: Vec<bool> =
        (0..n).map(|i| rng.random::<f64>() < 1.0 / (1.0 + (-0.4 * x[(i, 0)] + 0.2).exp())).collect();
    let model = fit_logistic(&x, &AssignmentVector::new(labels), &FitOptions::default()).unwrap();
    let p = predict(&model, &x).unwrap();
    for i in (0..n).step_by(n / 100).take(100) {
        let mut eta = rational(model.coefficients[0]);
        for j in 0..4 {
            eta += rational(model.coefficients[j + 1]) * rational(x[(i, j)]);
        }
        let eta = eta.to_f64().unwrap();
        let reference = if eta >= 0.0 { 1.0 / (1.0 + (-eta).exp()) } else { eta.exp() / (1.0 + eta.exp()) };
        assert!((p.values[i] - reference).abs() <= 1e-12, "row {i}: {} vs {reference}", p.values[i]);
    }
    assert_eq!(BigRational::from_integer(BigInt::from(2)).to_f64(), Some(2.0));
}

#[test]
fn monte_carlo_converges_to_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = normal_matrix(&mut rng, 10, 2);
    let z = [1, 1, 0, 1, 0, 0, 1, 0, 1, 0];
    let d = [1, 0, 0, 1, 0, 1, 1, 0, 1, 0];
    let ds = Dataset::new(
        x,
        vec!["a".into(), "b".into()],
        AssignmentVector::from_binary(&z).unwrap(),
        AssignmentVector::from_binary(&d).unwrap(),
    )
    .unwrap();
    for statistic in [StatisticKind::Scmd, StatisticKind::IvBias, StatisticKind::SqrtMahalanobis] {
        let cfg = TestConfig { n_draws: 100_000, seed: 2, ..Default::default() }.with_statistic(statistic);
        let exact = exact_test_default(&ds, Target::Instrument, &cfg).unwrap();
        assert_eq!(exact.n_draws, 252);
        let mc = run_test(&ds, Target::Instrument, &MechanismSpec::complete(10, 5).unwrap(), "complete", &cfg).unwrap();
        for (e, m) in exact.p_values().iter().zip(mc.p_values()) {
            assert!((e - m).abs() <= 0.01, "{statistic}: exact {e} vs mc {m}");
        }
    }
}

#[test]
fn band_endpoints_recompute_from_stored_draws() {
    let ds = generate(&Scenario::Null.spec(300, 4, 12)).unwrap().dataset;
    let mech = MechanismSpec::complete(300, 150).unwrap();
    let cfg = TestConfig { n_draws: 4_000, seed: 3, ..Default::default() }.with_statistic(StatisticKind::Scmd);
    let bands = per_covariate_quantiles(&ds, Target::Instrument, &mech, "complete", &cfg).unwrap();
    for (row, c) in bands.rows.iter().zip(&bands.test.components) {
        let s = sorted_copy(&c.draws);
        assert_eq!(row.q025, quantile_sorted(&s, 0.025));
        assert_eq!(row.q975, quantile_sorted(&s, 0.975));
        let width = row.q975 - row.q025;
        assert!((row.q025 + row.q975).abs() < 0.1 * width, "{row:?}");
        assert_eq!(row.inside_band, row.q025 <= row.observed_instrument && row.observed_instrument <= row.q975);
    }
}

#[test]
fn null_p_values_are_uniform() {
    let mut pvalues = Vec::new();
    for rep in 0..1_000u64 {
        let ds = generate(&Scenario::Null.spec(40, 3, 80_000 + rep)).unwrap().dataset;
        let mech = MechanismSpec::complete(40, 20).unwrap();
        let cfg = TestConfig { n_draws: 500, seed: rep, ..Default::default() };
        pvalues.push(run_test(&ds, Target::Instrument, &mech, "complete", &cfg).unwrap().p_value());
    }
    let (d, p) = common::ks_one_sample(&pvalues, |u| u.clamp(0.0, 1.0));
    assert!(p > 0.001, "KS D = {d}, p = {p}");
}

#[test]
fn confounded_instrument_is_detected() {
    let mut rejections = 0;
    for rep in 0..100u64 {
        let mut spec = Scenario::ConfoundedInstrument.spec(2_000, 5, 90_000 + rep);
        spec.instrument_model = InstrumentModel::Confounded { strength: 2.0 };
        let ds = generate(&spec).unwrap().dataset;
        let mech = MechanismSpec::complete(2_000, ds.instrument().n_treated()).unwrap();
        let cfg = TestConfig { n_draws: 1_000, seed: rep, ..Default::default() };
        rejections += run_test(&ds, Target::Instrument, &mech, "complete", &cfg).unwrap().primary().reject as usize;
    }
    assert!(rejections > 90, "{rejections}/100");
}

#[test]
fn shifted_normal_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.5).collect();
    let s = separation_diagnostics(&a, &b).unwrap();
    let expected = 2.0 * common::normal_cdf(-0.25);
    assert!((expected - 0.8026).abs() < 1e-4);
    assert!((s.overlap_fraction - expected).abs() <= 0.02, "{}", s.overlap_fraction);
    assert!(!s.intervals_disjoint);
}

#[test]
fn constant_propensity_matches_complete_randomization() {
    let ds = generate(&Scenario::Null.spec(400, 4, 14)).unwrap().dataset;
    let cfg = TestConfig { n_draws: 5_000, seed: 6, ..Default::default() };
    let n_t = ds.instrument().n_treated();
    let complete = MechanismSpec::complete(400, n_t).unwrap();
    let bernoulli = MechanismSpec::bernoulli(vec![n_t as f64 / 400.0; 400], 1_000).unwrap();
    let cr = run_test(&ds, Target::Instrument, &complete, "complete", &cfg).unwrap();
    let bt_z = run_test(&ds, Target::Instrument, &bernoulli, "bernoulli", &cfg).unwrap();
    let bt_d = run_test(&ds, Target::Exposure, &bernoulli, "bernoulli", &cfg).unwrap();
    for (a, b) in [(&cr, &bt_z), (&cr, &bt_d), (&bt_z, &bt_d)] {
        let (d, p) = common::ks_two_sample(&a.primary().draws, &b.primary().draws);
        assert!(p > 0.001, "KS D = {d}, p = {p}");
    }
}

#[test]
fn identical_instrument_and_exposure_are_symmetric() {
    let g = generate(&Scenario::ConfoundedInstrument.spec(1_000, 4, 15)).unwrap();
    let ds = &g.dataset;
    let same = Dataset::new(
        ds.covariates().clone(),
        ds.covariate_names().to_vec(),
        ds.instrument().clone(),
        ds.instrument().clone(),
    )
    .unwrap();
    let r = compare_mechanisms(&same, &ComparisonConfig { n_draws: 3_000, seed: 4, ..Default::default() }).unwrap();
    assert_eq!(r.observed_iv, r.observed_exp);
    assert_eq!(r.instrument_propensity.model, r.exposure_propensity.model);
    let (d, p) = common::ks_two_sample(&r.iv_bt_distribution.draws, &r.exp_bt_distribution.draws);
    assert!(p > 0.001, "KS D = {d}, p = {p}");
    let swapped = classify_case(r.p_iv, r.p_exp, 0.05).unwrap();
    assert_eq!(swapped.reject_exposure, r.classification.reject_instrument);
    assert_eq!(swapped.reject_instrument, r.classification.reject_exposure);
}

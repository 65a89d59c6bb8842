use nalgebra::DMatrix;
use proptest::prelude::*;

use rqda::discriminant::QuadraticRule;
use rqda::estimation::{fit, TrainingSet};
use rqda::experiment::{run_replicate, run_tuned, Scenario};
use rqda::gestim::GOptions;
use rqda::linalg::median;
use rqda::model::{sample_class, stream_rng, ScenarioConfig};
use rqda::pipeline::{default_grid, fit_improved, tune_gamma0};
use rqda::Priors;

fn spiked(p: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        p,
        n0: p,
        n1: p / 2,
        test0: 2000,
        test1: 1000,
        base_scale: 1.0,
        spike_strength: 3.0,
        spike_rank: None,
        mean_offset: 1.0,
        prior0: None,
        seed,
    }
}

/// Training set in the configured label order.
fn training(scn: &Scenario, r: usize) -> (TrainingSet, [DMatrix<f64>; 2]) {
    let mut rng = scn.replicate_rng(r);
    let [a, b] = scn.draw_training(&mut rng);
    let [ta, tb] = scn.draw_test(&mut rng);
    if scn.swapped {
        (TrainingSet::new(b, a).unwrap(), [tb, ta])
    } else {
        (TrainingSet::new(a, b).unwrap(), [ta, tb])
    }
}

fn error_rate(labels: &[usize], truth: usize) -> f64 {
    labels.iter().filter(|l| **l != truth).count() as f64 / labels.len() as f64
}

#[test]
fn fitted_design_matches_theory() {
    // γ̂₁ on the desk scenario, θ̂ on the informative one
    let desk = Scenario::new(&ScenarioConfig {
        p: 400,
        n0: 400,
        n1: 200,
        ..ScenarioConfig::desk()
    })
    .unwrap();
    let ctx = desk.theory().unwrap();
    let dof = desk.dof();
    let g1 = ctx.gamma1_design(dof[0], dof[1], 1.0).unwrap();
    let (train, _) = training(&desk, 0);
    let model = fit_improved(&train, 1.0, None).unwrap();
    assert!(model.label_map.swapped);
    assert!(
        (model.gamma1() - g1).abs() <= 0.02 * g1,
        "{} vs {g1}",
        model.gamma1()
    );

    let scn = Scenario::new(&spiked(400, 21)).unwrap();
    let ctx = scn.theory().unwrap();
    let dof = scn.dof();
    let g1 = ctx.gamma1_design(dof[0], dof[1], 1.0).unwrap();
    let star = ctx.theta_design(dof[0], dof[1], 1.0, g1).unwrap().theta_star;
    let (train, _) = training(&scn, 0);
    let model = fit_improved(&train, 1.0, None).unwrap();
    assert!((model.gamma1() - g1).abs() <= 0.02 * g1);
    assert!((model.theta - star).abs() <= 0.1, "{} vs {star}", model.theta);
}

#[test]
fn tuned_gamma_is_near_the_empirical_best() {
    let scn = Scenario::new(&ScenarioConfig::desk()).unwrap();
    let grid = rqda::linalg::logspace(-2.0, 2.0, 9);
    let opts = GOptions::default();
    let mut gaps = Vec::new();
    for r in 0..5 {
        let sweep = run_replicate(&scn, None, &grid, r, &opts).unwrap();
        let best = sweep
            .points
            .iter()
            .filter(|p| p.failure.is_none())
            .map(|p| p.improved)
            .fold(f64::INFINITY, f64::min);
        let tuned = run_tuned(&scn, &grid, r, &opts).unwrap();
        gaps.push(tuned.improved - best);
    }
    assert!(median(&gaps) <= 0.02, "{gaps:?}");
}

#[test]
fn improved_beats_standard_at_shared_gamma() {
    let scn = Scenario::new(&spiked(200, 31)).unwrap();
    let priors = scn.priors();
    let mut wins = 0;
    for r in 0..20 {
        let mut rng = scn.replicate_rng(r);
        let [x0, x1] = scn.draw_training(&mut rng);
        let [t0, t1] = scn.draw_test(&mut rng);
        let train = TrainingSet::new(x0, x1).unwrap();
        let model = fit_improved(&train, 1.0, Some(priors)).unwrap();
        let improved = priors.pi0 * error_rate(&model.predict(&t0).unwrap(), 0)
            + priors.pi1 * error_rate(&model.predict(&t1).unwrap(), 1);
        let shared = fit(&train, 1.0, 1.0).unwrap();
        let rule = QuadraticRule::standard(&shared, &priors).unwrap();
        let err = rqda::empirical_error(
            &rule.score_rows(&t0).unwrap(),
            &rule.score_rows(&t1).unwrap(),
            &priors,
        )
        .unwrap();
        wins += usize::from(improved < err.total);
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn separated_training_rows_are_recovered() {
    let cfg = ScenarioConfig {
        p: 30,
        n0: 120,
        n1: 60,
        mean_offset: 40.0,
        base_scale: 1.0,
        ..ScenarioConfig::desk()
    };
    let scn = Scenario::new(&cfg).unwrap();
    let (train, _) = training(&scn, 0);
    let model = tune_gamma0(&train, &default_grid(), None).unwrap();
    let a = error_rate(&model.predict(&train.x0).unwrap(), 0);
    let b = error_rate(&model.predict(&train.x1).unwrap(), 1);
    let agree = 1.0 - (a * 120.0 + b * 60.0) / 180.0;
    assert!(agree >= 0.99, "{agree}");

    // same data with the labels exchanged
    let flipped = tune_gamma0(&train.swapped(), &default_grid(), None).unwrap();
    let x = &train.x0;
    let l1 = model.predict(x).unwrap();
    let l2 = flipped.predict(x).unwrap();
    assert!(l1.iter().zip(&l2).all(|(u, v)| u + v == 1));
}

#[test]
fn end_to_end_is_deterministic() {
    let run = || {
        let scn = Scenario::new(&spiked(60, 5)).unwrap();
        let (train, test) = training(&scn, 3);
        let m = tune_gamma0(&train, &default_grid(), None).unwrap();
        (
            m.to_json().unwrap(),
            m.predict(&test[0]).unwrap(),
            m.predict(&test[1]).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn either_class_order_gives_the_same_labels(
        seed in any::<u64>(),
        n0 in 8usize..40,
        n1 in 8usize..40,
        gamma0 in 0.05f64..5.0,
        pi0 in 0.2f64..0.8,
    ) {
        let cfg = ScenarioConfig { p: 6, n0, n1, test0: 1, test1: 1, spike_rank: Some(2), seed, ..ScenarioConfig::desk() };
        let model = cfg.build_model().unwrap();
        let mut rng = stream_rng(seed, 1);
        let x0 = sample_class(&model.class0, n0, &mut rng).unwrap();
        let x1 = sample_class(&model.class1, n1, &mut rng).unwrap();
        let x = sample_class(&model.class0, 10, &mut rng).unwrap();
        let priors = Priors::new(pi0).unwrap();
        let train = TrainingSet::new(x0, x1).unwrap();
        let a = fit_improved(&train, gamma0, Some(priors)).unwrap();
        let b = fit_improved(&train.swapped(), gamma0, Some(priors.swapped())).unwrap();
        let la = a.predict(&x).unwrap();
        let lb: Vec<usize> = b.predict(&x).unwrap().into_iter().map(|l| 1 - l).collect();
        prop_assert_eq!(la, lb);
    }
}

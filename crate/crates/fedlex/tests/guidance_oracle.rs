//! Brute-force oracles for the guidance math, plus an independently
//! scripted replay of the exploration trace.

use fedlex::data::gen_synthetic;
use fedlex::guidance::{
    aggregate_global, explore, modulate, normalize_local, ExploreConfig, GuidanceMatrix,
};
use fedlex::nn::{mlp_layout, Activation, MlpModel, ParamVector};
use fedlex::rng::stream;
use fedlex::Error;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn vector(values: Vec<f64>) -> ParamVector {
    let layout = std::sync::Arc::new(fedlex::nn::Layout::new([(
        "t".to_string(),
        vec![values.len()],
    )]));
    ParamVector::from_values(layout, values).unwrap()
}

#[test]
fn normalize_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for case in 0..100 {
        let len = rng.gen_range(2..40);
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..50.0)).collect();
        let got = normalize_local(&GuidanceMatrix::from_raw(vector(raw.clone()))).unwrap();

        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, (&g, &r)) in got.values().values().iter().zip(&raw).enumerate() {
            let want = (r - min) / (max - min);
            assert!((g - want).abs() < 1e-12, "case {case} entry {i}: {g} vs {want}");
        }
        // non-constant input must span exactly [0,1]
        let lo = got.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = got.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }
}

#[test]
fn aggregate_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    for case in 0..100 {
        let len = rng.gen_range(2..20);
        let k = rng.gen_range(1..8);
        let matrices: Vec<GuidanceMatrix> = (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..10.0)).collect();
                normalize_local(&GuidanceMatrix::from_raw(vector(raw))).unwrap()
            })
            .collect();
        let refs: Vec<&GuidanceMatrix> = matrices.iter().collect();
        let got = aggregate_global(&refs).unwrap();

        for i in 0..len {
            let want: f64 =
                matrices.iter().map(|m| m.values().values()[i]).sum::<f64>() / k as f64;
            let g = got.values().values()[i];
            assert!((g - want).abs() < 1e-12, "case {case} entry {i}: {g} vs {want}");
            assert!((0.0..=1.0).contains(&g), "case {case} entry {i} out of range: {g}");
        }
    }
}

#[test]
fn modulate_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    for case in 0..100 {
        let len = rng.gen_range(1..30);
        let grad: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let g = normalize_local(&GuidanceMatrix::from_raw(vector(raw))).unwrap();
        let got = modulate(&vector(grad.clone()), &g, 0.0).unwrap();
        for i in 0..len {
            let want = grad[i] * g.values().values()[i];
            let m = got.values()[i];
            assert!((m - want).abs() < 1e-15, "case {case} entry {i}: {m} vs {want}");
            assert!(m.abs() <= grad[i].abs() + 1e-300, "damping violated at {i}");
        }
    }
}

#[test]
fn zero_learning_rate_gives_zero_deviations() {
    let train = gen_synthetic(2, 3, 10, 1.0, 4).unwrap();
    let initial = fedlex::nn::init_params(&[3, 4, 2], 8).unwrap();
    let cfg = ExploreConfig { epochs: 3, batch_size: 4, eta: 0.0, seed: 11 };
    let report = explore(0, &initial, &[3, 4, 2], Activation::Relu, &train, &cfg).unwrap();
    assert_eq!(report.epochs_run, 3);
    assert!(report.g_local.values().iter().all(|&d| d == 0.0));
    assert!(!report.g_local.normalized());
}

#[test]
fn exploration_matches_a_scripted_sgd_replay() {
    let train = gen_synthetic(3, 2, 11, 2.0, 21).unwrap();
    let initial = fedlex::nn::init_params(&[2, 5, 3], 77).unwrap();
    let cfg = ExploreConfig { epochs: 2, batch_size: 4, eta: 0.05, seed: 5 };
    let report = explore(9, &initial, &[2, 5, 3], Activation::Tanh, &train, &cfg).unwrap();

    // replay the identical trace with an independent loop
    let mut model = MlpModel::new(vec![2, 5, 3], Activation::Tanh, initial.clone()).unwrap();
    for epoch in 0..cfg.epochs as u64 {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "explore-shuffle", &[epoch]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.batch(chunk).unwrap();
            let (_, cache) = model.forward_loss(&batch).unwrap();
            let grad = model.backward(&cache).unwrap();
            model
                .params_mut()
                .add_scaled_in_place(&grad, -cfg.eta)
                .unwrap();
        }
    }
    for (i, (&got, (&w0, &w1))) in report
        .g_local
        .values()
        .iter()
        .zip(initial.iter().zip(model.params().iter()))
        .enumerate()
    {
        let want = (w0 - w1) * (w0 - w1);
        assert!((got - want).abs() < 1e-12, "entry {i}: {got} vs {want}");
        assert!(got >= 0.0);
    }

    // determinism: the same call reproduces the same report
    let again = explore(9, &initial, &[2, 5, 3], Activation::Tanh, &train, &cfg).unwrap();
    assert_eq!(again.g_local, report.g_local);
    assert_eq!(again.final_train_loss, report.final_train_loss);
}

#[test]
fn divergent_exploration_reports_the_epoch() {
    let train = gen_synthetic(2, 2, 10, 3.0, 6).unwrap();
    let initial = fedlex::nn::init_params(&[2, 4, 2], 1).unwrap();
    let cfg = ExploreConfig { epochs: 5, batch_size: 5, eta: 1e30, seed: 2 };
    match explore(4, &initial, &[2, 4, 2], Activation::Relu, &train, &cfg) {
        Err(Error::ExplorationDiverged { client: 4, epoch }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn end_to_end_guidance_range_invariant() {
    // exploration reports from real training normalize and aggregate into
    // a [0,1] matrix that is 0 only where every client had its minimum
    let train = gen_synthetic(2, 3, 15, 2.5, 9).unwrap();
    let initial = fedlex::nn::init_params(&[3, 4, 2], 3).unwrap();
    let mut locals = Vec::new();
    for client in 0..4 {
        let cfg = ExploreConfig { epochs: 2, batch_size: 5, eta: 0.05, seed: 100 + client as u64 };
        let report = explore(client, &initial, &[3, 4, 2], Activation::Tanh, &train, &cfg).unwrap();
        locals.push(normalize_local(&report.g_local).unwrap());
    }
    let refs: Vec<&GuidanceMatrix> = locals.iter().collect();
    let global = aggregate_global(&refs).unwrap();
    for (i, &v) in global.values().values().iter().enumerate() {
        assert!((0.0..=1.0).contains(&v));
        if v == 0.0 {
            for (c, l) in locals.iter().enumerate() {
                assert_eq!(
                    l.values().values()[i],
                    0.0,
                    "zero aggregate but client {c} nonzero at {i}"
                );
            }
        }
    }
    let _ = mlp_layout(&[3, 4, 2]).unwrap();
}

//! Round-loop behavior: sampling uniformity, degenerate federation,
//! neutral-guidance reduction, byte accounting, and determinism.

use rand::seq::SliceRandom;

use fedlex::aggregation::{AggHyper, AggregatorKind};
use fedlex::data::PartitionScheme;
use fedlex::nn::{init_params, Activation, MlpModel};
use fedlex::orchestrator::{
    run_experiment, sample_clients, DatasetConfig, ExplorerSpec, GuidanceConfig, ModelConfig,
    RoundMetrics, RunConfig, Simulation,
};
use fedlex::rng::stream;
use fedlex::Error;

fn base_config() -> RunConfig {
    RunConfig {
        seed: 11,
        rounds: 3,
        batch_size: 10,
        local_epochs: 1,
        clients: 4,
        clients_per_round: 2,
        eta: 0.05,
        weight_decay: 0.0,
        aggregator: AggregatorKind::Avg,
        hyper: AggHyper::defaults_for(AggregatorKind::Avg),
        guidance: None,
        dataset: DatasetConfig::Synthetic { classes: 2, input_dim: 4, per_class: 40, separation: 2.0 },
        partition: PartitionScheme::Dirichlet { alpha: 100.0 },
        model: ModelConfig { hidden: vec![8], activation: Activation::Relu },
        early_stop: false,
    }
}

fn guided(mut cfg: RunConfig, force_ones: bool) -> RunConfig {
    cfg.guidance = Some(GuidanceConfig {
        explorers: ExplorerSpec::Count(cfg.clients),
        explore_epochs: 5,
        floor: 0.0,
        per_layer_norm: false,
        delta_mode: false,
        force_ones,
    });
    cfg
}

fn csv(rows: &[RoundMetrics]) -> String {
    rows.iter().map(|r| r.csv_row()).collect::<Vec<_>>().join("\n")
}

#[test]
fn sampling_is_uniform_without_replacement() {
    let mut counts = [0usize; 10];
    for round in 1..=1000 {
        let ids = sample_clients(99, round, 10, 2);
        assert_eq!(ids.len(), 2);
        assert!(ids.windows(2).all(|w| w[0] < w[1]), "sorted and distinct");
        for id in ids {
            counts[id] += 1;
        }
    }
    for (id, &c) in counts.iter().enumerate() {
        let freq = c as f64 / 1000.0;
        assert!((0.17..=0.23).contains(&freq), "client {id} frequency {freq}");
    }
}

#[test]
fn single_client_round_is_centralized_training() {
    let mut cfg = base_config();
    cfg.clients = 1;
    cfg.clients_per_round = 1;
    cfg.local_epochs = 3;
    cfg.rounds = 2;
    cfg.weight_decay = 0.001;

    let mut sim = Simulation::new(cfg.clone()).unwrap();
    let train = sim.shards()[0].train.clone();

    // independent replica of the client schedule: plain mini-batch SGD
    // with L2, one shuffle stream per (round, client, epoch)
    let layer_sizes = vec![train.dim(), 8, train.classes()];
    let mut model = MlpModel::new(
        layer_sizes.clone(),
        Activation::Relu,
        init_params(&layer_sizes, cfg.seed).unwrap(),
    )
    .unwrap();
    for round in 1..=cfg.rounds {
        sim.training_round().unwrap();
        for epoch in 0..cfg.local_epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut stream(
                cfg.seed,
                "client-shuffle",
                &[round as u64, 0, epoch as u64],
            ));
            for chunk in order.chunks(cfg.batch_size) {
                let batch = train.batch(chunk).unwrap();
                let (_, cache) = model.forward_loss(&batch).unwrap();
                let mut grad = model.backward(&cache).unwrap();
                grad.add_scaled_in_place(model.params(), cfg.weight_decay).unwrap();
                model.params_mut().add_scaled_in_place(&grad, -cfg.eta).unwrap();
            }
        }
        let max_diff = sim
            .server()
            .weights
            .iter()
            .zip(model.params().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-12, "round {round}: server drifted {max_diff} from centralized");
    }
}

#[test]
fn neutral_guidance_reproduces_every_base_aggregator_exactly() {
    for kind in [AggregatorKind::Avg, AggregatorKind::Avgm, AggregatorKind::Sgd, AggregatorKind::Opt, AggregatorKind::Prox]
    {
        let mut cfg = base_config();
        cfg.aggregator = kind;
        cfg.hyper = AggHyper::defaults_for(kind);
        cfg.weight_decay = 0.0001;
        let baseline = run_experiment(&cfg).unwrap();
        let forced = run_experiment(&guided(cfg, true)).unwrap();
        assert_eq!(
            csv(&baseline.metrics),
            csv(&forced.metrics),
            "all-ones guidance altered the {} trajectory",
            kind.name()
        );
    }
}

#[test]
fn exploration_registers_every_explorer_and_counts_bytes() {
    let cfg = guided(base_config(), false);
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    let row = sim.exploration_round().unwrap();
    assert_eq!(sim.server().registry.len(), cfg.clients, "full participation");
    let elems = sim.server().weights.len() as u64;
    assert_eq!(row.round, 0);
    assert_eq!(row.sigma2_dw, 0.0);
    assert_eq!(row.bytes_up, 8 * cfg.clients as u64 * elems);
    assert_eq!(row.bytes_down, 8 * cfg.clients as u64 * elems);
    assert!(sim.server().g_global.normalized());

    // a second exploration round is a contract violation
    assert!(matches!(sim.exploration_round(), Err(Error::ContractViolation(_))));
}

#[test]
fn guided_runs_prepend_a_round_zero_row() {
    let plain = run_experiment(&base_config()).unwrap();
    assert_eq!(plain.metrics.len(), 3);
    assert_eq!(plain.metrics[0].round, 1);
    assert!(plain.final_guidance.is_none());

    let explored = run_experiment(&guided(base_config(), false)).unwrap();
    assert_eq!(explored.metrics.len(), 4);
    assert_eq!(explored.metrics[0].round, 0);
    assert!(explored.final_guidance.is_some());

    let forced = run_experiment(&guided(base_config(), true)).unwrap();
    assert_eq!(forced.metrics.len(), 3);
    assert_eq!(forced.metrics[0].round, 1);
    assert!(forced.final_guidance.is_none());
}

#[test]
fn training_bytes_match_the_closed_form() {
    let cfg = guided(base_config(), false);
    let out = run_experiment(&cfg).unwrap();
    let elems = out.final_weights.len() as u64;
    let k = cfg.clients_per_round as u64;
    for row in &out.metrics[1..] {
        assert_eq!(row.bytes_up, 8 * k * elems);
        assert_eq!(row.bytes_down, 8 * (k * elems + elems), "guidance broadcast counted once");
        assert!(row.dropped.is_empty());
        assert_eq!(row.train_losses.len(), cfg.clients_per_round);
    }

    let plain = run_experiment(&base_config()).unwrap();
    for row in &plain.metrics {
        assert_eq!(row.bytes_down, 8 * k * elems, "no guidance traffic on baselines");
    }
}

#[test]
fn identical_configs_yield_identical_trajectories() {
    let cfg = guided(base_config(), false);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(csv(&a.metrics), csv(&b.metrics));
    assert_eq!(a.final_weights.values(), b.final_weights.values());
    assert_eq!(
        a.final_guidance.unwrap().values().values(),
        b.final_guidance.unwrap().values().values()
    );
}

#[test]
fn runaway_learning_rate_is_a_fatal_config() {
    let mut cfg = base_config();
    cfg.eta = 1e300;
    match run_experiment(&cfg) {
        Err(Error::FatalConfig(msg)) => assert!(msg.contains("diverged"), "{msg}"),
        other => panic!("expected fatal config error, got {other:?}"),
    }

    let mut cfg = guided(base_config(), false);
    cfg.eta = 1e300;
    match run_experiment(&cfg) {
        Err(Error::FatalConfig(msg)) => assert!(msg.contains("explorers diverged"), "{msg}"),
        other => panic!("expected fatal config error, got {other:?}"),
    }
}

#[test]
fn early_stop_cuts_a_plateaued_run_short() {
    let mut cfg = base_config();
    cfg.rounds = 200;
    cfg.eta = 0.1;
    cfg.early_stop = true;
    let out = run_experiment(&cfg).unwrap();
    assert!(
        out.metrics.len() > 20 && out.metrics.len() < 200,
        "expected an early stop, ran {} rounds",
        out.metrics.len()
    );
}

//! Harness behavior: config parsing with defaults, campaigns, summaries,
//! and manifest replay.

use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use fedlex::aggregation::AggregatorKind;
use fedlex::data::PartitionScheme;
use fedlex::nn::Activation;
use fedlex::orchestrator::{DatasetConfig, ExplorerSpec, Manifest, RunConfig};
use fedlex_cli::config_file::{parse_config, ParsedConfig};
use fedlex_cli::runner::execute_run;
use fedlex_cli::summary::{scan_runs, summarize, RankRow};
use fedlex_cli::{execute_campaign, plan};

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn parse_single(dir: &Path, text: &str) -> anyhow::Result<RunConfig> {
    let path = write_config(dir, "cfg.toml", text);
    match parse_config(&path, &[])? {
        ParsedConfig::Single(cfg) => Ok(cfg),
        ParsedConfig::Campaign(_) => panic!("expected a single-run config"),
    }
}

const TINY_RUN: &str = r#"
seed = 3
rounds = 2
batch_size = 10
local_epochs = 1
clients = 4
clients_per_round = 2
eta = 0.05

[dataset]
classes = 2
input_dim = 4
per_class = 30
separation = 2.0

[partition]
scheme = "dirichlet"
alpha = 100.0

[model]
hidden = [6]
"#;

#[test]
fn empty_file_takes_every_default() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_single(tmp.path(), "").unwrap();
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.rounds, 500);
    assert_eq!(cfg.batch_size, 50);
    assert_eq!(cfg.local_epochs, 1);
    assert_eq!(cfg.clients, 20);
    assert_eq!(cfg.clients_per_round, 5);
    assert_eq!(cfg.eta, 0.0003);
    assert_eq!(cfg.weight_decay, 0.0001);
    assert_eq!(cfg.aggregator, AggregatorKind::Avg);
    assert!(cfg.guidance.is_none());
    assert_eq!(
        cfg.dataset,
        DatasetConfig::Synthetic { classes: 10, input_dim: 32, per_class: 200, separation: 3.0 }
    );
    assert_eq!(cfg.partition, PartitionScheme::Pathological { classes_per_client: 2 });
    assert_eq!(cfg.model.hidden, vec![64]);
    assert_eq!(cfg.model.activation, Activation::Relu);
    assert!(!cfg.early_stop);

    // the defaults echo into a verifiable manifest
    let manifest = Manifest::new(cfg.clone()).unwrap();
    let back = Manifest::from_json(&manifest.to_json().unwrap()).unwrap();
    assert_eq!(back.config, cfg);
}

#[test]
fn bad_values_name_the_offending_key() {
    let tmp = TempDir::new().unwrap();

    let err = parse_single(tmp.path(), "clients_per_round = 0\n").unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("clients_per_round"), "{msg}");
    assert!(msg.contains("1 <= clients_per_round <= clients"), "{msg}");

    let err = parse_single(tmp.path(), "batchsize = 50\n").unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("batchsize"), "{msg}");

    let err = parse_single(tmp.path(), "eta = \"fast\"\n").unwrap_err();
    let msg = format!("{err:#}").to_lowercase();
    assert!(msg.contains("invalid type"), "{msg}");

    let err = parse_single(tmp.path(), "[partition]\nscheme = \"zipf\"\n").unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("partition.scheme"), "{msg}");
}

#[test]
fn experiment_scale_config_round_trips_through_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
clients = 20
clients_per_round = 5
batch_size = 50
eta = 0.0003
aggregator = "prox"

[guidance]
explorers = 20
explore_epochs = 150
"#;
    let cfg = parse_single(tmp.path(), text).unwrap();
    assert_eq!(cfg.aggregator, AggregatorKind::Prox);
    assert_eq!(cfg.variant_name(), "lex-prox");
    let g = cfg.guidance.clone().unwrap();
    assert!(matches!(g.explorers, ExplorerSpec::Count(20)));
    assert_eq!(g.explore_epochs, 150);
    assert_eq!(cfg.hyper.prox_mu, 0.01);

    let manifest = Manifest::new(cfg.clone()).unwrap();
    let back = Manifest::from_json(&manifest.to_json().unwrap()).unwrap();
    assert_eq!(back.config, cfg);
}

#[test]
fn explorer_counts_and_fractions_are_told_apart() {
    let tmp = TempDir::new().unwrap();
    let count = parse_single(tmp.path(), "clients = 8\n[guidance]\nexplorers = 2\n").unwrap();
    assert!(matches!(count.guidance.unwrap().explorers, ExplorerSpec::Count(2)));
    let frac = parse_single(tmp.path(), "clients = 8\n[guidance]\nexplorers = 0.5\n").unwrap();
    assert!(
        matches!(frac.guidance.as_ref().unwrap().explorers, ExplorerSpec::Fraction(f) if f == 0.5)
    );
    assert_eq!(frac.resolved_explorers(), Some(4));
}

#[test]
fn set_overrides_beat_the_file() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), "cfg.toml", TINY_RUN);
    let overrides = vec![
        "eta=0.002".to_string(),
        "partition.alpha=0.7".to_string(),
        "aggregator=avgm".to_string(),
    ];
    let cfg = match parse_config(&path, &overrides).unwrap() {
        ParsedConfig::Single(cfg) => cfg,
        _ => panic!("expected single"),
    };
    assert_eq!(cfg.eta, 0.002);
    assert_eq!(cfg.partition, PartitionScheme::Dirichlet { alpha: 0.7 });
    assert_eq!(cfg.aggregator, AggregatorKind::Avgm);

    let err = parse_config(&path, &["no_such_knob=1".to_string()]).unwrap_err();
    assert!(format!("{err:#}").contains("no_such_knob"));
}

#[test]
fn sgd_server_lr_defaults_to_the_client_rate() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_single(tmp.path(), "aggregator = \"sgd\"\neta = 0.002\n").unwrap();
    assert_eq!(cfg.hyper.server_lr, 0.002);
    let cfg = parse_single(
        tmp.path(),
        "aggregator = \"sgd\"\neta = 0.002\n[hyper]\nserver_lr = 0.5\n",
    )
    .unwrap();
    assert_eq!(cfg.hyper.server_lr, 0.5);
}

#[test]
fn campaign_grid_produces_a_file_per_run_and_a_row_per_variant() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let text = format!(
        "seeds = [1, 2, 3]\nvariants = [\"avg\", \"lex-avg\"]\noutput = \"{}\"\n{TINY_RUN}\n[guidance]\nexplore_epochs = 3\n",
        out.display()
    );
    let path = write_config(tmp.path(), "campaign.toml", &text);
    let spec = match parse_config(&path, &[]).unwrap() {
        ParsedConfig::Campaign(spec) => spec,
        _ => panic!("expected campaign"),
    };
    let runs = plan(&spec).unwrap();
    assert_eq!(runs.len(), 6, "2 variants x 3 seeds");

    let outcome = execute_campaign(&spec).unwrap();
    assert_eq!(outcome.completed, 6);
    assert!(outcome.failures.is_empty());

    let metric_files: Vec<PathBuf> = runs.iter().map(|r| r.dir.join("metrics.csv")).collect();
    for f in &metric_files {
        assert!(f.exists(), "missing {}", f.display());
    }
    assert_eq!(outcome.summary.len(), 2, "one row per variant");
    for row in &outcome.summary {
        assert_eq!(row.runs, 3);
    }
    // two variants on one config point rank 1 and 2 in some order (or tie)
    assert_eq!(outcome.ranks.len(), 2);
    let total: f64 = outcome.ranks.iter().map(|r| r.mean_rank).sum();
    assert_eq!(total, 3.0);
    assert!(out.join("summary.csv").exists());
    assert!(out.join("ranks.csv").exists());
}

#[test]
fn campaign_records_failures_and_finishes_the_rest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let text = format!(
        "seeds = [5]\noutput = \"{}\"\n{TINY_RUN}\n[sweep]\neta = [0.05, 1e300]\n",
        out.display()
    );
    let path = write_config(tmp.path(), "campaign.toml", &text);
    let spec = match parse_config(&path, &[]).unwrap() {
        ParsedConfig::Campaign(spec) => spec,
        _ => panic!("expected campaign"),
    };
    let outcome = execute_campaign(&spec).unwrap();
    assert_eq!(outcome.completed, 1);
    assert_eq!(outcome.failures.len(), 1);
    let (dir, reason) = &outcome.failures[0];
    assert!(dir.join("error.txt").exists());
    assert!(reason.contains("diverged"), "{reason}");
    assert_eq!(outcome.summary.len(), 1, "the surviving run still gets summarized");
}

/// Writes a fake completed run with a chosen final accuracy.
fn fabricate_run(dir: &Path, cfg: &RunConfig, final_acc: f64) {
    fs::create_dir_all(dir).unwrap();
    let manifest = Manifest::new(cfg.clone()).unwrap();
    fs::write(dir.join("manifest.json"), manifest.to_json().unwrap()).unwrap();
    let csv = format!(
        "round,mean_acc,std_acc,pooled_acc,sigma2_dw,bytes_up,bytes_down\n1,{final_acc},0,{final_acc},0,8,8\n"
    );
    fs::write(dir.join("metrics.csv"), csv).unwrap();
}

fn tiny_cfg(seed: u64, aggregator: AggregatorKind) -> RunConfig {
    let tmp = TempDir::new().unwrap();
    let mut cfg = parse_single(tmp.path(), TINY_RUN).unwrap();
    cfg.seed = seed;
    cfg.aggregator = aggregator;
    cfg
}

#[test]
fn summarize_means_match_hand_computation_exactly() {
    let tmp = TempDir::new().unwrap();
    for (seed, acc) in [(1u64, 10.0), (2, 20.0), (3, 40.0)] {
        fabricate_run(&tmp.path().join(format!("seed{seed}")), &tiny_cfg(seed, AggregatorKind::Avg), acc);
    }
    let (records, incomplete) = scan_runs(&[tmp.path().to_path_buf()]).unwrap();
    assert!(incomplete.is_empty());
    assert_eq!(records.len(), 3);
    let (rows, ranks) = summarize(&records);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].runs, 3);
    assert_eq!(rows[0].mean_acc, (10.0 + 20.0 + 40.0) / 3.0);
    let mean = rows[0].mean_acc;
    let hand_var =
        ((10.0 - mean).powi(2) + (20.0 - mean).powi(2) + (40.0 - mean).powi(2)) / 3.0;
    assert_eq!(rows[0].std_acc, f64::sqrt(hand_var));
    assert_eq!(ranks, vec![RankRow { variant: "avg".to_string(), mean_rank: 1.0, points: 1 }]);
}

#[test]
fn identical_variants_tie_at_rank_one_point_five() {
    let tmp = TempDir::new().unwrap();
    fabricate_run(&tmp.path().join("a"), &tiny_cfg(1, AggregatorKind::Avg), 50.0);
    fabricate_run(&tmp.path().join("b"), &tiny_cfg(1, AggregatorKind::Avgm), 50.0);
    let (records, _) = scan_runs(&[tmp.path().to_path_buf()]).unwrap();
    let (_, ranks) = summarize(&records);
    assert_eq!(ranks.len(), 2);
    for r in &ranks {
        assert_eq!(r.mean_rank, 1.5, "{}", r.variant);
    }
}

#[test]
fn strictly_ordered_variants_rank_one_two_three() {
    let tmp = TempDir::new().unwrap();
    fabricate_run(&tmp.path().join("a"), &tiny_cfg(1, AggregatorKind::Avg), 30.0);
    fabricate_run(&tmp.path().join("b"), &tiny_cfg(1, AggregatorKind::Avgm), 50.0);
    fabricate_run(&tmp.path().join("c"), &tiny_cfg(1, AggregatorKind::Opt), 40.0);
    let (records, _) = scan_runs(&[tmp.path().to_path_buf()]).unwrap();
    let (_, ranks) = summarize(&records);
    let by_name: Vec<(String, f64)> =
        ranks.iter().map(|r| (r.variant.clone(), r.mean_rank)).collect();
    assert_eq!(
        by_name,
        vec![
            ("avg".to_string(), 3.0),
            ("avgm".to_string(), 1.0),
            ("opt".to_string(), 2.0)
        ]
    );
}

#[test]
fn incomplete_runs_are_reported_and_excluded() {
    let tmp = TempDir::new().unwrap();
    fabricate_run(&tmp.path().join("good"), &tiny_cfg(1, AggregatorKind::Avg), 30.0);
    // manifest without metrics
    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    let manifest = Manifest::new(tiny_cfg(2, AggregatorKind::Avg)).unwrap();
    fs::write(broken.join("manifest.json"), manifest.to_json().unwrap()).unwrap();

    let (records, incomplete) = scan_runs(&[tmp.path().to_path_buf()]).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(incomplete.len(), 1);
    assert!(incomplete[0].0.ends_with("broken"));
    let (rows, _) = summarize(&records);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].runs, 1);
    assert_eq!(rows[0].std_acc, 0.0, "single run has zero spread");
}

#[test]
fn rerunning_a_manifest_reproduces_the_metrics_bytes() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = parse_single(tmp.path(), TINY_RUN).unwrap();
    cfg.guidance = Some(fedlex::orchestrator::GuidanceConfig {
        explorers: ExplorerSpec::Fraction(0.5),
        explore_epochs: 3,
        floor: 0.0,
        per_layer_norm: false,
        delta_mode: false,
        force_ones: false,
    });
    let first_dir = tmp.path().join("first");
    execute_run(&cfg, &first_dir).unwrap();

    let replay = match parse_config(&first_dir.join("manifest.json"), &[]).unwrap() {
        ParsedConfig::Single(cfg) => cfg,
        _ => panic!("expected single"),
    };
    let second_dir = tmp.path().join("second");
    execute_run(&replay, &second_dir).unwrap();

    let a = fs::read(first_dir.join("metrics.csv")).unwrap();
    let b = fs::read(second_dir.join("metrics.csv")).unwrap();
    assert_eq!(a, b, "manifest replay diverged");
    assert!(first_dir.join("g_global.bin").exists());
    assert!(first_dir.join("g_global.layout.json").exists());
}

//! Protocol driver: data setup, exploration, the round loop, metrics.

use std::collections::BTreeMap;

use rand::seq::index;

use crate::aggregation::{AggregatorState, ClientUpdate};
use crate::data::{
    gen_synthetic, load_idx, partition_dirichlet, partition_pathological, ClientShard, Dataset,
    PartitionScheme, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::guidance::{
    aggregate_global, explore, normalize_local_with, refresh_global, ExploreConfig, GuidanceMatrix,
};
use crate::nn::{init_params, variance_across, MlpModel, ParamVector};
use crate::rng::{derive_seed, stream};

use super::client::{local_update, LocalReport};
use super::config::{DatasetConfig, RunConfig};
use super::metrics::{mean_std, RoundMetrics};

const BYTES_PER_VALUE: u64 = 8;

/// Early-stop window and tolerance (accuracy points) for the pooled-test
/// plateau rule.
const PLATEAU_WINDOW: usize = 20;
const PLATEAU_TOLERANCE: f64 = 0.1;

/// Server-held mutable state.
pub struct ServerState {
    pub weights: ParamVector,
    pub g_global: GuidanceMatrix,
    /// Normalized local guidance per explorer, filled during round 0.
    pub registry: BTreeMap<usize, GuidanceMatrix>,
    pub aggregator: AggregatorState,
    /// Last completed round; 0 before any training.
    pub round: usize,
}

/// Everything a run produced beyond the per-round rows.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_weights: ParamVector,
    /// Present for runs that ran the exploration phase.
    pub final_guidance: Option<GuidanceMatrix>,
}

/// Uniform sample of `k` distinct clients for a training round, sorted so
/// downstream iteration order is canonical.
pub fn sample_clients(seed: u64, round: usize, clients: usize, k: usize) -> Vec<usize> {
    let mut rng = stream(seed, "round-sampling", &[round as u64]);
    let mut ids = index::sample(&mut rng, clients, k).into_vec();
    ids.sort_unstable();
    ids
}

fn sample_explorers(seed: u64, clients: usize, n: usize) -> Vec<usize> {
    let mut rng = stream(seed, "explorer-selection", &[]);
    let mut ids = index::sample(&mut rng, clients, n).into_vec();
    ids.sort_unstable();
    ids
}

/// A fully materialized run: data, shards, and server state.
pub struct Simulation {
    cfg: RunConfig,
    shards: Vec<ClientShard>,
    pooled_test: Dataset,
    server: ServerState,
    /// Scratch model reused for client work and evaluation.
    scratch: MlpModel,
    pooled_history: Vec<f64>,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Simulation> {
        cfg.validate()?;
        let dataset = match &cfg.dataset {
            DatasetConfig::Synthetic { classes, input_dim, per_class, separation } => gen_synthetic(
                *classes,
                *input_dim,
                *per_class,
                *separation,
                derive_seed(cfg.seed, "dataset", &[]),
            )?,
            DatasetConfig::Idx { images, labels } => load_idx(images.as_ref(), labels.as_ref())?,
        };
        let spec = PartitionSpec {
            scheme: cfg.partition.clone(),
            clients: cfg.clients,
            seed: derive_seed(cfg.seed, "partition", &[]),
        };
        let shards = match cfg.partition {
            PartitionScheme::Pathological { .. } => partition_pathological(&dataset, &spec)?,
            PartitionScheme::Dirichlet { .. } => partition_dirichlet(&dataset, &spec)?,
        };
        let tests: Vec<&Dataset> = shards.iter().map(|s| &s.test).collect();
        let pooled_test = Dataset::concat(&tests)?;

        let layer_sizes = cfg.layer_sizes(dataset.dim(), dataset.classes());
        let weights = init_params(&layer_sizes, cfg.seed)?;
        let layout = weights.layout().clone();
        let aggregator = AggregatorState::new(cfg.aggregator, cfg.hyper.clone(), layout.clone())?;
        let scratch =
            MlpModel::new(layer_sizes, cfg.model.activation, weights.clone())?;
        let server = ServerState {
            weights,
            g_global: GuidanceMatrix::all_ones(layout),
            registry: BTreeMap::new(),
            aggregator,
            round: 0,
        };
        Ok(Simulation { cfg, shards, pooled_test, server, scratch, pooled_history: Vec::new() })
    }

    pub fn cfg(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    /// Global-model accuracy over every client's test set plus the pooled
    /// set: (mean, std, pooled).
    fn evaluate(&mut self) -> Result<(f64, f64, f64)> {
        self.scratch.set_params(self.server.weights.clone())?;
        let accs: Vec<f64> = self
            .shards
            .iter()
            .map(|s| self.scratch.accuracy(s.test.inputs(), s.test.labels()))
            .collect();
        let (mean, std) = mean_std(&accs);
        let pooled = self.scratch.accuracy(self.pooled_test.inputs(), self.pooled_test.labels());
        Ok((mean, std, pooled))
    }

    /// Round 0 of guided runs: explorers train in isolation, their
    /// normalized deviations are registered, and the first global guidance
    /// matrix is aggregated. Global weights are untouched.
    pub fn exploration_round(&mut self) -> Result<RoundMetrics> {
        let g_cfg = match &self.cfg.guidance {
            Some(g) if !g.force_ones => g.clone(),
            _ => {
                return Err(Error::ContractViolation(
                    "exploration round requested on a run without exploration".to_string(),
                ))
            }
        };
        if self.server.round != 0 || !self.server.registry.is_empty() {
            return Err(Error::ContractViolation(
                "exploration must precede all training rounds".to_string(),
            ));
        }
        let n_exp = self.cfg.resolved_explorers().expect("guided run has explorer count");
        let explorer_ids = sample_explorers(self.cfg.seed, self.cfg.clients, n_exp);

        let mut dropped = Vec::new();
        for &id in &explorer_ids {
            let ecfg = ExploreConfig {
                epochs: g_cfg.explore_epochs,
                batch_size: self.cfg.batch_size,
                eta: self.cfg.eta,
                seed: derive_seed(self.cfg.seed, "explore", &[id as u64]),
            };
            let report = explore(
                id,
                &self.server.weights,
                self.scratch.layer_sizes(),
                self.cfg.model.activation,
                &self.shards[id].train,
                &ecfg,
            );
            match report {
                Ok(r) => {
                    let local = normalize_local_with(&r.g_local, g_cfg.per_layer_norm)?;
                    self.server.registry.insert(id, local);
                }
                Err(Error::ExplorationDiverged { .. }) => dropped.push(id),
                Err(e) => return Err(e),
            }
        }
        if self.server.registry.is_empty() {
            return Err(Error::FatalConfig(format!(
                "all {n_exp} explorers diverged; lower eta ({}) or explore_epochs ({})",
                self.cfg.eta, g_cfg.explore_epochs
            )));
        }
        let locals: Vec<&GuidanceMatrix> = self.server.registry.values().collect();
        self.server.g_global = aggregate_global(&locals)?;

        let (mean_acc, std_acc, pooled_acc) = self.evaluate()?;
        let elems = self.server.weights.len() as u64;
        let transmitted = self.server.registry.len() as u64;
        Ok(RoundMetrics {
            round: 0,
            mean_acc,
            std_acc,
            pooled_acc,
            sigma2_dw: 0.0,
            bytes_up: BYTES_PER_VALUE * transmitted * elems,
            bytes_down: BYTES_PER_VALUE * explorer_ids.len() as u64 * elems,
            train_losses: Vec::new(),
            dropped,
        })
    }

    /// One full training round: sample, refresh guidance, local updates,
    /// aggregate, measure.
    pub fn training_round(&mut self) -> Result<RoundMetrics> {
        let round = self.server.round + 1;
        let ids =
            sample_clients(self.cfg.seed, round, self.cfg.clients, self.cfg.clients_per_round);
        if self.cfg.explores() {
            self.server.g_global =
                refresh_global(&self.server.registry, &self.server.g_global, &ids)?;
        }

        let mut reports: Vec<LocalReport> = Vec::with_capacity(ids.len());
        let mut dropped = Vec::new();
        for &id in &ids {
            let guidance = self.cfg.guided().then_some(&self.server.g_global);
            let outcome = local_update(
                &self.cfg,
                round,
                id,
                &self.server.weights,
                guidance,
                &self.shards[id].train,
                &mut self.scratch,
            );
            match outcome {
                Ok(r) => reports.push(r),
                Err(Error::ClientDiverged { .. }) => dropped.push(id),
                Err(e) => return Err(e),
            }
        }
        if reports.is_empty() {
            return Err(Error::FatalConfig(format!(
                "every sampled client diverged in round {round}; lower eta ({})",
                self.cfg.eta
            )));
        }

        let mut meta = Vec::with_capacity(reports.len());
        let mut payloads = Vec::with_capacity(reports.len());
        for r in reports {
            meta.push((r.client, r.num_samples, r.mean_step_loss));
            payloads.push(r.payload);
        }
        let sigma2_dw = variance_across(&payloads)?;
        let updates: Vec<ClientUpdate> = meta
            .iter()
            .zip(payloads)
            .map(|(&(client, num_samples, _), payload)| ClientUpdate { client, payload, num_samples })
            .collect();
        self.server.aggregator.apply(&mut self.server.weights, &updates)?;
        self.server.round = round;

        let (mean_acc, std_acc, pooled_acc) = self.evaluate()?;
        let elems = self.server.weights.len() as u64;
        let guidance_elems = if self.cfg.explores() { elems } else { 0 };
        Ok(RoundMetrics {
            round,
            mean_acc,
            std_acc,
            pooled_acc,
            sigma2_dw,
            bytes_up: BYTES_PER_VALUE * updates.len() as u64 * elems,
            bytes_down: BYTES_PER_VALUE * (ids.len() as u64 * elems + guidance_elems),
            train_losses: meta.iter().map(|&(c, _, l)| (c, l)).collect(),
            dropped,
        })
    }

    /// True once pooled accuracy has stopped improving per the plateau
    /// rule.
    fn plateaued(&self) -> bool {
        let n = self.pooled_history.len();
        if n <= PLATEAU_WINDOW {
            return false;
        }
        let best = |slice: &[f64]| slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        best(&self.pooled_history) - best(&self.pooled_history[..n - PLATEAU_WINDOW])
            < PLATEAU_TOLERANCE
    }

    /// Drives the whole run, handing each row to `sink` as soon as it is
    /// measured.
    pub fn run_with<F>(&mut self, mut sink: F) -> Result<ExperimentOutput>
    where
        F: FnMut(&RoundMetrics) -> Result<()>,
    {
        let mut metrics = Vec::with_capacity(self.cfg.rounds + 1);
        if self.cfg.explores() {
            let row = self.exploration_round()?;
            sink(&row)?;
            metrics.push(row);
        }
        for _ in 0..self.cfg.rounds {
            let row = self.training_round()?;
            self.pooled_history.push(row.pooled_acc);
            sink(&row)?;
            metrics.push(row);
            if self.cfg.early_stop && self.plateaued() {
                break;
            }
        }
        Ok(ExperimentOutput {
            metrics,
            final_weights: self.server.weights.clone(),
            final_guidance: self.cfg.explores().then(|| self.server.g_global.clone()),
        })
    }
}

/// Runs `cfg` to completion and returns the trajectory.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput> {
    Simulation::new(cfg.clone())?.run_with(|_| Ok(()))
}

/// Like [`run_experiment`] but streams each row to `sink` as it lands.
pub fn run_experiment_with<F>(cfg: &RunConfig, sink: F) -> Result<ExperimentOutput>
where
    F: FnMut(&RoundMetrics) -> Result<()>,
{
    Simulation::new(cfg.clone())?.run_with(sink)
}

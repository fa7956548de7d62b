//! Resolved experiment configuration.
//!
//! A `RunConfig` is fully explicit: every knob has a concrete value, so
//! serializing it into the run manifest captures the experiment exactly.
//! Parsing user-facing config files (with defaults and overrides) lives in
//! the CLI crate; this type is what those files resolve into.

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggHyper, AggregatorKind};
use crate::data::PartitionScheme;
use crate::error::{Error, Result};
use crate::nn::Activation;

/// Explorer pool size, either an absolute count or a fraction of the
/// client population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExplorerSpec {
    Count(usize),
    Fraction(f64),
}

/// Settings for the guidance protocol; present only on guided runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub explorers: ExplorerSpec,
    pub explore_epochs: usize,
    /// Lower bound applied to guidance entries during modulation.
    pub floor: f64,
    /// Normalize each tensor separately instead of jointly.
    pub per_layer_norm: bool,
    /// Modulate the transmitted weight delta once instead of every local
    /// gradient step.
    pub delta_mode: bool,
    /// Diagnostic: skip exploration and pin the guidance matrix to all
    /// ones, which must reproduce the base aggregator exactly.
    pub force_ones: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic { classes: usize, input_dim: usize, per_class: usize, separation: f64 },
    Idx { images: String, labels: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Everything a run needs; deterministic given `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Training rounds (exploration is round 0 and not counted here).
    pub rounds: usize,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub clients: usize,
    pub clients_per_round: usize,
    pub eta: f64,
    pub weight_decay: f64,
    pub aggregator: AggregatorKind,
    pub hyper: AggHyper,
    pub guidance: Option<GuidanceConfig>,
    pub dataset: DatasetConfig,
    pub partition: PartitionScheme,
    pub model: ModelConfig,
    /// Stop once pooled test accuracy has not improved by 0.1 points over
    /// the last 20 rounds.
    pub early_stop: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::InvalidConfig { key: key.to_string(), message })
        };
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".to_string());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs", "must be at least 1".to_string());
        }
        if self.clients == 0 {
            return bad("clients", "must be at least 1".to_string());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients {
            return bad(
                "clients_per_round",
                format!(
                    "must satisfy 1 <= clients_per_round <= clients, got {} with {} clients",
                    self.clients_per_round, self.clients
                ),
            );
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta", format!("must be a positive real, got {}", self.eta));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay", format!("must be a non-negative real, got {}", self.weight_decay));
        }
        self.hyper.validate(self.aggregator)?;
        if let Some(g) = &self.guidance {
            if g.explore_epochs == 0 {
                return bad("explore_epochs", "must be at least 1".to_string());
            }
            if !(0.0..1.0).contains(&g.floor) {
                return bad("guidance_floor", format!("must be in [0,1), got {}", g.floor));
            }
            match g.explorers {
                ExplorerSpec::Count(n) => {
                    if n == 0 || n > self.clients {
                        return bad(
                            "explorers",
                            format!("count must be in [1, {}], got {n}", self.clients),
                        );
                    }
                }
                ExplorerSpec::Fraction(f) => {
                    if !(f > 0.0 && f <= 1.0) {
                        return bad("explorers", format!("fraction must be in (0, 1], got {f}"));
                    }
                }
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic { classes, input_dim, per_class, separation } => {
                if *classes < 2 {
                    return bad("dataset.classes", format!("need at least 2 classes, got {classes}"));
                }
                if *input_dim == 0 {
                    return bad("dataset.input_dim", "must be at least 1".to_string());
                }
                if *per_class < 10 {
                    return bad("dataset.per_class", format!("need at least 10 samples per class, got {per_class}"));
                }
                if !(*separation >= 0.0) || !separation.is_finite() {
                    return bad("dataset.separation", format!("must be a non-negative real, got {separation}"));
                }
            }
            DatasetConfig::Idx { images, labels } => {
                if images.is_empty() || labels.is_empty() {
                    return bad("dataset.images", "image and label paths must be non-empty".to_string());
                }
            }
        }
        match &self.partition {
            PartitionScheme::Pathological { classes_per_client } => {
                if *classes_per_client == 0 {
                    return bad("partition.classes_per_client", "must be at least 1".to_string());
                }
            }
            PartitionScheme::Dirichlet { alpha } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return bad("partition.alpha", format!("must be a positive real, got {alpha}"));
                }
            }
        }
        Ok(())
    }

    /// Explorer pool size as a concrete count in [1, clients].
    pub fn resolved_explorers(&self) -> Option<usize> {
        self.guidance.as_ref().map(|g| match g.explorers {
            ExplorerSpec::Count(n) => n,
            ExplorerSpec::Fraction(f) => {
                ((f * self.clients as f64).round() as usize).clamp(1, self.clients)
            }
        })
    }

    /// True when the run modulates gradients with a guidance matrix
    /// (including the all-ones diagnostic).
    pub fn guided(&self) -> bool {
        self.guidance.is_some()
    }

    /// True when the run performs the exploration phase and transmits
    /// guidance matrices.
    pub fn explores(&self) -> bool {
        self.guidance.as_ref().is_some_and(|g| !g.force_ones)
    }

    /// Variant label used in summaries, e.g. "avgm" or "lex-avgm".
    pub fn variant_name(&self) -> String {
        let base = self.aggregator.name();
        if self.guided() {
            format!("lex-{base}")
        } else {
            base.to_string()
        }
    }

    /// Full layer sizes including input and output dims.
    pub fn layer_sizes(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.model.hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.model.hidden);
        sizes.push(classes);
        sizes
    }
}

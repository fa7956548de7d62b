//! Loss-exploration guidance: per-parameter deviation statistics and
//! gradient modulation.
//!
//! Explorer clients train alone for a fixed number of epochs and report the
//! squared initial-vs-final deviation of every parameter. Each report is
//! min-max normalized per client, and the server averages the normalized
//! matrices into a global guidance matrix with entries in [0,1]. During
//! federated rounds local gradients are scaled elementwise by the guidance,
//! so parameters that moved consistently across explorers keep full updates
//! while stable ones are damped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layout, MlpModel, ParamVector};
use crate::rng::stream;

/// Per-parameter guidance values sharing the model's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMatrix {
    values: ParamVector,
    normalized: bool,
}

impl GuidanceMatrix {
    /// Wraps raw (unnormalized) deviation values.
    pub fn from_raw(values: ParamVector) -> GuidanceMatrix {
        GuidanceMatrix { values, normalized: false }
    }

    /// Neutral guidance: modulation with it is the identity.
    pub fn all_ones(layout: std::sync::Arc<Layout>) -> GuidanceMatrix {
        GuidanceMatrix { values: ParamVector::ones(layout), normalized: true }
    }

    pub fn values(&self) -> &ParamVector {
        &self.values
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes the values as little-endian f64 plus a JSON layout sidecar.
    pub fn save(&self, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in self.values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin_path, bytes)?;
        let sidecar = Sidecar {
            normalized: self.normalized,
            tensors: self
                .values
                .layout()
                .tensors()
                .iter()
                .map(|t| SidecarTensor { name: t.name.clone(), shape: t.shape.clone() })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        fs::write(sidecar_path, text)?;
        Ok(())
    }

    /// Inverse of [`GuidanceMatrix::save`]; fails closed on any mismatch.
    pub fn load(bin_path: &Path, sidecar_path: &Path) -> Result<GuidanceMatrix> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
        let layout = std::sync::Arc::new(Layout::new(
            sidecar.tensors.into_iter().map(|t| (t.name, t.shape)),
        ));
        let bytes = fs::read(bin_path)?;
        if bytes.len() != layout.total_len() * 8 {
            return Err(Error::Format(format!(
                "{}: {} bytes but layout wants {}",
                bin_path.display(),
                bytes.len(),
                layout.total_len() * 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if sidecar.normalized && values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format(format!(
                "{}: normalized guidance with entries outside [0,1]",
                bin_path.display()
            )));
        }
        Ok(GuidanceMatrix {
            values: ParamVector::from_values(layout, values)?,
            normalized: sidecar.normalized,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    normalized: bool,
    tensors: Vec<SidecarTensor>,
}

#[derive(Serialize, Deserialize)]
struct SidecarTensor {
    name: String,
    shape: Vec<usize>,
}

/// One explorer's result: raw deviations plus bookkeeping.
#[derive(Debug, Clone)]
pub struct ExplorationReport {
    pub client: usize,
    pub g_local: GuidanceMatrix,
    pub epochs_run: usize,
    pub final_train_loss: f64,
}

/// Knobs for the exploration phase.
#[derive(Debug, Clone)]
pub struct ExploreConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub seed: u64,
}

/// Runs plain mini-batch SGD from `initial` on the client's training data
/// and reports the squared per-parameter deviation. `initial` is left
/// untouched for the caller.
pub fn explore(
    client: usize,
    initial: &ParamVector,
    layer_sizes: &[usize],
    activation: Activation,
    train: &Dataset,
    cfg: &ExploreConfig,
) -> Result<ExplorationReport> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidInput("exploration needs at least one epoch".to_string()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("exploration batch size must be positive".to_string()));
    }
    if !cfg.eta.is_finite() || cfg.eta < 0.0 {
        return Err(Error::InvalidInput(format!(
            "exploration learning rate must be a non-negative real, got {}",
            cfg.eta
        )));
    }
    let mut model = MlpModel::new(layer_sizes.to_vec(), activation, initial.clone())?;
    for epoch in 0..cfg.epochs {
        // each epoch's order is a pure function of (seed, epoch)
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "explore-shuffle", &[epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.batch(chunk)?;
            let (loss, cache) = model.forward_loss(&batch)?;
            if !loss.is_finite() {
                return Err(Error::ExplorationDiverged { client, epoch });
            }
            let grad = model.backward(&cache)?;
            model.params_mut().add_scaled_in_place(&grad, -cfg.eta)?;
        }
    }
    let (final_train_loss, _) = model.forward_loss(&train.full_batch())?;
    if !final_train_loss.is_finite() {
        return Err(Error::ExplorationDiverged { client, epoch: cfg.epochs - 1 });
    }
    Ok(ExplorationReport {
        client,
        g_local: GuidanceMatrix::from_raw(squared_deviation(initial, model.params())?),
        epochs_run: cfg.epochs,
        final_train_loss,
    })
}

/// Elementwise (initial - final)^2.
pub fn squared_deviation(initial: &ParamVector, final_: &ParamVector) -> Result<ParamVector> {
    let diff = initial.sub(final_)?;
    diff.hadamard(&diff)
}

/// Joint min-max normalization over the whole matrix; all entries equal
/// maps to all ones so modulation degrades to the identity.
pub fn normalize_local(raw: &GuidanceMatrix) -> Result<GuidanceMatrix> {
    normalize_local_with(raw, false)
}

/// As [`normalize_local`], but optionally min-max per layout tensor.
pub fn normalize_local_with(raw: &GuidanceMatrix, per_layer: bool) -> Result<GuidanceMatrix> {
    if raw.normalized {
        return Err(Error::ContractViolation(
            "normalize_local input is already normalized".to_string(),
        ));
    }
    if let Some(bad) = raw.values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::ContractViolation(format!(
            "raw guidance must be non-negative, found {bad}"
        )));
    }
    let mut out = raw.values.clone();
    if per_layer {
        let layout = raw.values.layout().clone();
        for t in layout.tensors() {
            normalize_range(&mut out.values_mut()[t.offset..t.offset + t.len()]);
        }
    } else {
        normalize_range(out.values_mut());
    }
    Ok(GuidanceMatrix { values: out, normalized: true })
}

fn normalize_range(values: &mut [f64]) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        values.iter_mut().for_each(|v| *v = 1.0);
    } else {
        let span = max - min;
        values.iter_mut().for_each(|v| *v = (*v - min) / span);
    }
}

/// Elementwise mean of normalized client matrices.
pub fn aggregate_global(locals: &[&GuidanceMatrix]) -> Result<GuidanceMatrix> {
    let first = locals
        .first()
        .ok_or_else(|| Error::InvalidInput("aggregate over zero guidance matrices".to_string()))?;
    if locals.iter().any(|g| !g.normalized) {
        return Err(Error::ContractViolation(
            "aggregate_global requires normalized inputs".to_string(),
        ));
    }
    let mut acc = ParamVector::zeros(first.values.layout().clone());
    for g in locals {
        acc.add_scaled_in_place(&g.values, 1.0)?;
    }
    let k = locals.len() as f64;
    // clamp shields the [0,1] invariant from summation roundoff
    for v in acc.values_mut() {
        *v = (*v / k).clamp(0.0, 1.0);
    }
    Ok(GuidanceMatrix { values: acc, normalized: true })
}

/// Recomputes the global matrix over the stored local matrices of the
/// participating explorers; an empty intersection keeps the previous
/// matrix bit-identical.
pub fn refresh_global(
    registry: &BTreeMap<usize, GuidanceMatrix>,
    previous: &GuidanceMatrix,
    participating: &[usize],
) -> Result<GuidanceMatrix> {
    let wanted: BTreeSet<usize> = participating.iter().copied().collect();
    let members: Vec<&GuidanceMatrix> = registry
        .iter()
        .filter(|(id, _)| wanted.contains(id))
        .map(|(_, g)| g)
        .collect();
    if members.is_empty() {
        return Ok(previous.clone());
    }
    aggregate_global(&members)
}

/// Elementwise gradient x max(guidance, floor).
pub fn modulate(gradient: &ParamVector, g: &GuidanceMatrix, floor: f64) -> Result<ParamVector> {
    if !g.normalized {
        return Err(Error::ContractViolation(
            "modulation requires a normalized guidance matrix".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&floor) {
        return Err(Error::InvalidInput(format!(
            "guidance floor must be in [0,1), got {floor}"
        )));
    }
    gradient.check_same_layout(&g.values)?;
    let mut out = gradient.clone();
    for (o, gv) in out.values_mut().iter_mut().zip(g.values.iter()) {
        *o *= gv.max(floor);
    }
    debug_assert!(out
        .iter()
        .zip(gradient.iter())
        .all(|(m, r)| !r.is_finite() || m.abs() <= r.abs()));
    Ok(out)
}

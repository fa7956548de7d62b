//! Client-side work for one round: local SGD with optional proximal term,
//! weight decay, and per-step guidance modulation.

use rand::seq::SliceRandom;

use crate::aggregation::AggregatorKind;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::guidance::{modulate, GuidanceMatrix};
use crate::nn::{MlpModel, ParamVector};
use crate::rng::stream;

use super::config::RunConfig;

/// What a client hands back to the server.
#[derive(Debug, Clone)]
pub struct LocalReport {
    pub client: usize,
    /// Weight delta, or the raw gradient for the sgd aggregator.
    pub payload: ParamVector,
    pub num_samples: usize,
    /// Mean mini-batch loss over all local steps (single-step loss for
    /// sgd).
    pub mean_step_loss: f64,
}

/// Runs one client's local contribution for `round`. The model is scratch
/// space and is reset from `w_global` here.
pub fn local_update(
    cfg: &RunConfig,
    round: usize,
    client: usize,
    w_global: &ParamVector,
    guidance: Option<&GuidanceMatrix>,
    train: &Dataset,
    model: &mut MlpModel,
) -> Result<LocalReport> {
    if cfg.aggregator.sends_gradient() {
        sgd_gradient(cfg, round, client, w_global, guidance, train, model)
    } else {
        local_train(cfg, round, client, w_global, guidance, train, model)
    }
}

/// E epochs of mini-batch SGD from the broadcast weights; payload is the
/// resulting weight delta.
fn local_train(
    cfg: &RunConfig,
    round: usize,
    client: usize,
    w_global: &ParamVector,
    guidance: Option<&GuidanceMatrix>,
    train: &Dataset,
    model: &mut MlpModel,
) -> Result<LocalReport> {
    let floor = cfg.guidance.as_ref().map(|g| g.floor).unwrap_or(0.0);
    let delta_mode = cfg.guidance.as_ref().is_some_and(|g| g.delta_mode);
    let per_step = guidance.filter(|_| !delta_mode);
    let prox_mu = match cfg.aggregator {
        AggregatorKind::Prox => cfg.hyper.prox_mu,
        _ => 0.0,
    };

    model.set_params(w_global.clone())?;
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    for epoch in 0..cfg.local_epochs {
        // each epoch's order is a pure function of (seed, round, client,
        // epoch) so worker scheduling cannot disturb it
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(
            cfg.seed,
            "client-shuffle",
            &[round as u64, client as u64, epoch as u64],
        ));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.batch(chunk)?;
            let (loss, cache) = model.forward_loss(&batch)?;
            if !loss.is_finite() {
                return Err(Error::ClientDiverged { client, round });
            }
            loss_sum += loss;
            steps += 1;
            let mut grad = model.backward(&cache)?;
            if prox_mu > 0.0 {
                let drift = model.params().sub(w_global)?;
                grad.add_scaled_in_place(&drift, prox_mu)?;
            }
            if cfg.weight_decay > 0.0 {
                grad.add_scaled_in_place(model.params(), cfg.weight_decay)?;
            }
            let step = match per_step {
                Some(g) => modulate(&grad, g, floor)?,
                None => grad,
            };
            model.params_mut().add_scaled_in_place(&step, -cfg.eta)?;
        }
    }

    let mut payload = model.params().sub(w_global)?;
    if delta_mode {
        if let Some(g) = guidance {
            payload = modulate(&payload, g, floor)?;
        }
    }
    if payload.iter().any(|v| !v.is_finite()) {
        return Err(Error::ClientDiverged { client, round });
    }
    Ok(LocalReport {
        client,
        payload,
        num_samples: train.len(),
        mean_step_loss: loss_sum / steps.max(1) as f64,
    })
}

/// One full-batch gradient at the broadcast weights; payload is the
/// (optionally modulated) gradient itself.
fn sgd_gradient(
    cfg: &RunConfig,
    round: usize,
    client: usize,
    w_global: &ParamVector,
    guidance: Option<&GuidanceMatrix>,
    train: &Dataset,
    model: &mut MlpModel,
) -> Result<LocalReport> {
    let floor = cfg.guidance.as_ref().map(|g| g.floor).unwrap_or(0.0);
    model.set_params(w_global.clone())?;
    let batch = train.full_batch();
    let (loss, cache) = model.forward_loss(&batch)?;
    if !loss.is_finite() {
        return Err(Error::ClientDiverged { client, round });
    }
    let mut grad = model.backward(&cache)?;
    if cfg.weight_decay > 0.0 {
        grad.add_scaled_in_place(w_global, cfg.weight_decay)?;
    }
    let payload = match guidance {
        Some(g) => modulate(&grad, g, floor)?,
        None => grad,
    };
    if payload.iter().any(|v| !v.is_finite()) {
        return Err(Error::ClientDiverged { client, round });
    }
    Ok(LocalReport { client, payload, num_samples: train.len(), mean_step_loss: loss })
}

//! Server-side aggregation strategies over client updates.
//!
//! `avg` and `prox` share the plain weighted-mean server step (`prox`
//! differs only in the client-side objective), `avgm` keeps server
//! momentum, `sgd` descends along averaged raw gradients, and `opt` runs a
//! bias-corrected Adam step on the averaged delta as pseudo-gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Avg,
    Avgm,
    Sgd,
    Opt,
    Prox,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Avg => "avg",
            AggregatorKind::Avgm => "avgm",
            AggregatorKind::Sgd => "sgd",
            AggregatorKind::Opt => "opt",
            AggregatorKind::Prox => "prox",
        }
    }

    /// Whether the client transmits a raw gradient instead of a weight
    /// delta.
    pub fn sends_gradient(self) -> bool {
        matches!(self, AggregatorKind::Sgd)
    }
}

/// Server-side hyperparameters; unused fields are ignored by the kinds
/// that do not read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggHyper {
    pub server_lr: f64,
    pub beta_momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub prox_mu: f64,
}

impl AggHyper {
    pub fn defaults_for(kind: AggregatorKind) -> AggHyper {
        AggHyper {
            server_lr: match kind {
                AggregatorKind::Opt => 1e-2,
                _ => 1.0,
            },
            beta_momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            prox_mu: 0.01,
        }
    }

    pub fn validate(&self, kind: AggregatorKind) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::InvalidConfig { key: key.to_string(), message })
        };
        if matches!(kind, AggregatorKind::Avgm | AggregatorKind::Sgd | AggregatorKind::Opt)
            && !(self.server_lr > 0.0 && self.server_lr.is_finite())
        {
            return bad("server_lr", format!("must be a positive real, got {}", self.server_lr));
        }
        if !(0.0..1.0).contains(&self.beta_momentum) {
            return bad("beta_momentum", format!("must be in [0,1), got {}", self.beta_momentum));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad(
                "adam_beta1",
                format!("adam betas must be in [0,1), got {} and {}", self.adam_beta1, self.adam_beta2),
            );
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", format!("must be positive, got {}", self.adam_eps));
        }
        if !(self.prox_mu >= 0.0) || !self.prox_mu.is_finite() {
            return bad("prox_mu", format!("must be a non-negative real, got {}", self.prox_mu));
        }
        Ok(())
    }
}

/// One client's transmitted payload: a weight delta for avg/avgm/opt/prox
/// or a raw gradient for sgd.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: usize,
    pub payload: ParamVector,
    pub num_samples: usize,
}

/// Mutable server-side optimizer state.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    kind: AggregatorKind,
    hyper: AggHyper,
    momentum: ParamVector,
    adam_m: ParamVector,
    adam_v: ParamVector,
    adam_t: u64,
}

impl AggregatorState {
    pub fn new(
        kind: AggregatorKind,
        hyper: AggHyper,
        layout: std::sync::Arc<crate::nn::Layout>,
    ) -> Result<AggregatorState> {
        hyper.validate(kind)?;
        Ok(AggregatorState {
            kind,
            hyper,
            momentum: ParamVector::zeros(layout.clone()),
            adam_m: ParamVector::zeros(layout.clone()),
            adam_v: ParamVector::zeros(layout),
            adam_t: 0,
        })
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn hyper(&self) -> &AggHyper {
        &self.hyper
    }

    pub fn adam_t(&self) -> u64 {
        self.adam_t
    }

    /// Dispatches to the kind's server step.
    pub fn apply(&mut self, global: &mut ParamVector, updates: &[ClientUpdate]) -> Result<()> {
        match self.kind {
            AggregatorKind::Avg | AggregatorKind::Prox => apply_avg(self, global, updates),
            AggregatorKind::Avgm => apply_avgm(self, global, updates),
            AggregatorKind::Sgd => apply_sgd(self, global, updates),
            AggregatorKind::Opt => apply_opt(self, global, updates),
        }
    }
}

/// Sample-count weighted mean of the payloads. Equal counts take the exact
/// arithmetic-mean path.
pub fn weighted_mean(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::InvalidInput("weighted mean over zero updates".to_string()))?;
    for u in updates {
        if u.num_samples == 0 {
            return Err(Error::InvalidInput(format!(
                "client {} reports zero samples",
                u.client
            )));
        }
        first.payload.check_same_layout(&u.payload)?;
    }
    let mut acc = ParamVector::zeros(first.payload.layout().clone());
    if updates.iter().all(|u| u.num_samples == first.num_samples) {
        for u in updates {
            acc.add_scaled_in_place(&u.payload, 1.0)?;
        }
        let k = updates.len() as f64;
        acc.values_mut().iter_mut().for_each(|v| *v /= k);
    } else {
        let total: usize = updates.iter().map(|u| u.num_samples).sum();
        for u in updates {
            acc.add_scaled_in_place(&u.payload, u.num_samples as f64)?;
        }
        let t = total as f64;
        acc.values_mut().iter_mut().for_each(|v| *v /= t);
    }
    Ok(acc)
}

fn expect_kind(state: &AggregatorState, allowed: &[AggregatorKind], op: &str) -> Result<()> {
    if !allowed.contains(&state.kind) {
        return Err(Error::ContractViolation(format!(
            "{op} called on {} state",
            state.kind.name()
        )));
    }
    Ok(())
}

/// W <- W + weighted_mean(deltas). Also the server step for prox.
pub fn apply_avg(
    state: &mut AggregatorState,
    global: &mut ParamVector,
    updates: &[ClientUpdate],
) -> Result<()> {
    expect_kind(state, &[AggregatorKind::Avg, AggregatorKind::Prox], "apply_avg")?;
    let mean = weighted_mean(updates)?;
    global.add_scaled_in_place(&mean, 1.0)
}

/// v <- beta v + weighted_mean(deltas); W <- W + server_lr v.
pub fn apply_avgm(
    state: &mut AggregatorState,
    global: &mut ParamVector,
    updates: &[ClientUpdate],
) -> Result<()> {
    expect_kind(state, &[AggregatorKind::Avgm], "apply_avgm")?;
    let mean = weighted_mean(updates)?;
    let beta = state.hyper.beta_momentum;
    for (v, m) in state.momentum.values_mut().iter_mut().zip(mean.iter()) {
        *v = beta * *v + m;
    }
    global.add_scaled_in_place(&state.momentum, state.hyper.server_lr)
}

/// W <- W - server_lr weighted_mean(gradients).
pub fn apply_sgd(
    state: &mut AggregatorState,
    global: &mut ParamVector,
    updates: &[ClientUpdate],
) -> Result<()> {
    expect_kind(state, &[AggregatorKind::Sgd], "apply_sgd")?;
    let mean = weighted_mean(updates)?;
    global.add_scaled_in_place(&mean, -state.hyper.server_lr)
}

/// Bias-corrected Adam ascent along the weighted-mean delta.
pub fn apply_opt(
    state: &mut AggregatorState,
    global: &mut ParamVector,
    updates: &[ClientUpdate],
) -> Result<()> {
    expect_kind(state, &[AggregatorKind::Opt], "apply_opt")?;
    let mean = weighted_mean(updates)?;
    state.adam_t += 1;
    let (b1, b2) = (state.hyper.adam_beta1, state.hyper.adam_beta2);
    let corr1 = 1.0 - b1.powi(state.adam_t as i32);
    let corr2 = 1.0 - b2.powi(state.adam_t as i32);
    let lr = state.hyper.server_lr;
    let eps = state.hyper.adam_eps;
    for ((w, m), (v, g)) in global
        .values_mut()
        .iter_mut()
        .zip(state.adam_m.values_mut())
        .zip(state.adam_v.values_mut().iter_mut().zip(mean.iter()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *w += lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// local_grad + mu (w_local - w_global).
pub fn prox_gradient(
    local_grad: &ParamVector,
    w_local: &ParamVector,
    w_global: &ParamVector,
    mu: f64,
) -> Result<ParamVector> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "proximal coefficient must be a non-negative real, got {mu}"
        )));
    }
    let diff = w_local.sub(w_global)?;
    let mut out = local_grad.clone();
    out.add_scaled_in_place(&diff, mu)?;
    Ok(out)
}

//! Minimal feed-forward network with exact backprop.
//!
//! The network is a stack of dense layers with a configurable hidden
//! activation and a softmax cross-entropy head. Everything runs in f64 and
//! every operation is a pure function of its inputs, so training traces are
//! bit-reproducible.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Layout, ParamVector};
use crate::rng::derive_seed;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// A labelled mini-batch: `n` rows of `dim` features plus class indices.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Batch> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("batch must hold at least one sample".to_string()));
        }
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "inputs length {} does not match {} samples x {} features",
                inputs.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Batch { inputs, labels, dim, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Builds the parameter layout for the given layer sizes: alternating
/// `w{l}` (out x in, row-major) and `b{l}` (out) tensors.
pub fn mlp_layout(layer_sizes: &[usize]) -> Result<Arc<Layout>> {
    validate_layer_sizes(layer_sizes)?;
    let mut tensors = Vec::new();
    for l in 1..layer_sizes.len() {
        let (fan_in, fan_out) = (layer_sizes[l - 1], layer_sizes[l]);
        tensors.push((format!("w{l}"), vec![fan_out, fan_in]));
        tensors.push((format!("b{l}"), vec![fan_out]));
    }
    Ok(Arc::new(Layout::new(tensors)))
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least input and output layer sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer sizes must all be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Initial weights: zero-mean uniform scaled by `1/sqrt(fan_in)` per layer,
/// biases zero. A pure function of `(layer_sizes, seed)`.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<ParamVector> {
    let layout = mlp_layout(layer_sizes)?;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "init-params", &[]));
    let mut params = ParamVector::zeros(layout);
    let values = params.values_mut();
    let mut offset = 0;
    for l in 1..layer_sizes.len() {
        let (fan_in, fan_out) = (layer_sizes[l - 1], layer_sizes[l]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in values[offset..offset + fan_out * fan_in].iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        // biases stay zero
        offset += fan_out * fan_in + fan_out;
    }
    Ok(params)
}

/// Opaque state produced by [`MlpModel::forward_loss`] and consumed by
/// [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Flat copy of the inputs the pass ran on.
    inputs: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    /// Pre-activations per hidden layer, each n x layer_size row-major.
    pre_acts: Vec<Vec<f64>>,
    /// Post-activations per hidden layer.
    acts: Vec<Vec<f64>>,
    /// Softmax probabilities, n x classes.
    probs: Vec<f64>,
    /// Snapshot of the parameter values used, for staleness detection.
    params_snapshot: Vec<f64>,
}

/// Feed-forward classifier over a flat [`ParamVector`].
#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: ParamVector,
}

impl MlpModel {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, params: ParamVector) -> Result<MlpModel> {
        let expected = mlp_layout(&layer_sizes)?;
        if params.layout().as_ref() != expected.as_ref() {
            return Err(Error::ShapeMismatch(
                "parameter layout does not match layer sizes".to_string(),
            ));
        }
        Ok(MlpModel { layer_sizes, activation, params })
    }

    /// Builds the model with fresh weights from [`init_params`].
    pub fn init(layer_sizes: Vec<usize>, activation: Activation, seed: u64) -> Result<MlpModel> {
        let params = init_params(&layer_sizes, seed)?;
        MlpModel::new(layer_sizes, activation, params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.layout() != self.params.layout() && params.layout().as_ref() != self.params.layout().as_ref() {
            return Err(Error::ShapeMismatch(
                "replacement parameters have a different layout".to_string(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    fn weight_offset(&self, l: usize) -> (usize, usize, usize) {
        // offset of w{l+1} given 0-based dense-layer index l
        let mut offset = 0;
        for k in 0..l {
            offset += self.layer_sizes[k] * self.layer_sizes[k + 1] + self.layer_sizes[k + 1];
        }
        (offset, self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    /// Mean softmax cross-entropy over the batch plus the cache for
    /// [`MlpModel::backward`].
    pub fn forward_loss(&self, batch: &Batch) -> Result<(f64, ForwardCache)> {
        if batch.dim() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, model expects {}",
                batch.dim(),
                self.input_dim()
            )));
        }
        if batch.classes() != self.classes() {
            return Err(Error::ShapeMismatch(format!(
                "batch declares {} classes, model has {}",
                batch.classes(),
                self.classes()
            )));
        }
        let n = batch.len();
        let n_layers = self.layer_sizes.len() - 1;
        let mut pre_acts = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut acts = Vec::with_capacity(n_layers.saturating_sub(1));

        let values = self.params.values();
        let mut current: Vec<f64> = batch.inputs().to_vec();
        for l in 0..n_layers {
            let (offset, fan_in, fan_out) = self.weight_offset(l);
            let w = &values[offset..offset + fan_out * fan_in];
            let b = &values[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            let mut z = vec![0.0; n * fan_out];
            for i in 0..n {
                let row = &current[i * fan_in..(i + 1) * fan_in];
                for o in 0..fan_out {
                    let wrow = &w[o * fan_in..(o + 1) * fan_in];
                    let mut acc = b[o];
                    for (x, wv) in row.iter().zip(wrow) {
                        acc += x * wv;
                    }
                    z[i * fan_out + o] = acc;
                }
            }
            if l + 1 < n_layers {
                let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre_acts.push(z);
                acts.push(a.clone());
                current = a;
            } else {
                current = z; // logits
            }
        }

        let classes = self.classes();
        let mut probs = vec![0.0; n * classes];
        let mut loss = 0.0;
        for i in 0..n {
            let logits = &current[i * classes..(i + 1) * classes];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (c, &z) in logits.iter().enumerate() {
                let e = (z - max).exp();
                probs[i * classes + c] = e;
                denom += e;
            }
            for c in 0..classes {
                probs[i * classes + c] /= denom;
            }
            let y = batch.labels()[i];
            loss -= (logits[y] - max) - denom.ln();
        }
        loss /= n as f64;

        Ok((
            loss,
            ForwardCache {
                inputs: batch.inputs().to_vec(),
                labels: batch.labels().to_vec(),
                n,
                pre_acts,
                acts,
                probs,
                params_snapshot: values.to_vec(),
            },
        ))
    }

    /// Gradient of the batch-mean loss with the same layout as the params.
    ///
    /// The cache must come from a [`MlpModel::forward_loss`] call on the
    /// current parameters; mutating the params in between is detected and
    /// rejected.
    pub fn backward(&self, cache: &ForwardCache) -> Result<ParamVector> {
        let values = self.params.values();
        if cache.params_snapshot != values {
            return Err(Error::ContractViolation(
                "forward cache is stale: parameters changed since forward_loss".to_string(),
            ));
        }
        let n = cache.n;
        let n_layers = self.layer_sizes.len() - 1;
        let classes = self.classes();

        let mut grad = ParamVector::zeros(self.params.layout().clone());

        // dL/dlogits = (softmax - onehot) / n
        let mut delta = vec![0.0; n * classes];
        for i in 0..n {
            for c in 0..classes {
                let mut d = cache.probs[i * classes + c];
                if c == cache.labels[i] {
                    d -= 1.0;
                }
                delta[i * classes + c] = d / n as f64;
            }
        }

        for l in (0..n_layers).rev() {
            let (offset, fan_in, fan_out) = self.weight_offset(l);
            let below: &[f64] = if l == 0 { &cache.inputs } else { &cache.acts[l - 1] };
            {
                let gvals = grad.values_mut();
                for i in 0..n {
                    let drow = &delta[i * fan_out..(i + 1) * fan_out];
                    let arow = &below[i * fan_in..(i + 1) * fan_in];
                    for (o, &d) in drow.iter().enumerate() {
                        let wrow = &mut gvals[offset + o * fan_in..offset + (o + 1) * fan_in];
                        for (g, &a) in wrow.iter_mut().zip(arow) {
                            *g += d * a;
                        }
                        gvals[offset + fan_out * fan_in + o] += d;
                    }
                }
            }
            if l > 0 {
                let w = &values[offset..offset + fan_out * fan_in];
                let z_below = &cache.pre_acts[l - 1];
                let mut next = vec![0.0; n * fan_in];
                for i in 0..n {
                    let drow = &delta[i * fan_out..(i + 1) * fan_out];
                    let out = &mut next[i * fan_in..(i + 1) * fan_in];
                    for (o, &d) in drow.iter().enumerate() {
                        let wrow = &w[o * fan_in..(o + 1) * fan_in];
                        for (g, &wv) in out.iter_mut().zip(wrow) {
                            *g += d * wv;
                        }
                    }
                    for (j, g) in out.iter_mut().enumerate() {
                        *g *= self.activation.derivative(z_below[i * fan_in + j]);
                    }
                }
                delta = next;
            }
        }
        Ok(grad)
    }

    /// Central finite-difference approximation of the gradient; the testing
    /// oracle for [`MlpModel::backward`].
    pub fn finite_diff_grad(&self, batch: &Batch, epsilon: f64) -> Result<ParamVector> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let mut probe = self.clone();
        let mut grad = ParamVector::zeros(self.params.layout().clone());
        for m in 0..self.params.len() {
            let orig = self.params.values()[m];
            probe.params.values_mut()[m] = orig + epsilon;
            let (plus, _) = probe.forward_loss(batch)?;
            probe.params.values_mut()[m] = orig - epsilon;
            let (minus, _) = probe.forward_loss(batch)?;
            probe.params.values_mut()[m] = orig;
            grad.values_mut()[m] = (plus - minus) / (2.0 * epsilon);
        }
        Ok(grad)
    }

    /// Top-1 accuracy (percent) on raw feature/label slices.
    pub fn accuracy(&self, inputs: &[f64], labels: &[usize]) -> f64 {
        let dim = self.input_dim();
        let classes = self.classes();
        assert_eq!(inputs.len(), labels.len() * dim, "inputs do not match labels");
        if labels.is_empty() {
            return 0.0;
        }
        let values = self.params.values();
        let n_layers = self.layer_sizes.len() - 1;
        let mut correct = 0usize;
        let mut buf_a: Vec<f64> = Vec::new();
        let mut buf_b: Vec<f64> = Vec::new();
        for (i, &label) in labels.iter().enumerate() {
            buf_a.clear();
            buf_a.extend_from_slice(&inputs[i * dim..(i + 1) * dim]);
            for l in 0..n_layers {
                let (offset, fan_in, fan_out) = self.weight_offset(l);
                let w = &values[offset..offset + fan_out * fan_in];
                let b = &values[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
                buf_b.clear();
                for o in 0..fan_out {
                    let wrow = &w[o * fan_in..(o + 1) * fan_in];
                    let mut acc = b[o];
                    for (x, wv) in buf_a.iter().zip(wrow) {
                        acc += x * wv;
                    }
                    buf_b.push(if l + 1 < n_layers { self.activation.apply(acc) } else { acc });
                }
                std::mem::swap(&mut buf_a, &mut buf_b);
            }
            let mut best = 0usize;
            for c in 1..classes {
                if buf_a[c] > buf_a[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        100.0 * correct as f64 / labels.len() as f64
    }
}

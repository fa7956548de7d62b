//! Flat parameter vectors with a named-tensor layout.
//!
//! A [`ParamVector`] is the carrier for model weights, gradients, weight
//! deltas and guidance values alike: a flat `Vec<f64>` plus a shared
//! [`Layout`] describing how the flat storage maps onto layer tensors.
//! All arithmetic requires identical layouts and is layout-preserving.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mapping from flat storage to named layer tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    total_len: usize,
}

impl Layout {
    /// Builds a layout from `(name, shape)` pairs, assigning offsets in order.
    pub fn new(tensors: impl IntoIterator<Item = (String, Vec<usize>)>) -> Layout {
        let mut specs = Vec::new();
        let mut offset = 0;
        for (name, shape) in tensors {
            let len: usize = shape.iter().product();
            specs.push(TensorSpec { name, offset, shape });
            offset += len;
        }
        Layout { tensors: specs, total_len: offset }
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }
}

/// Flat vector of real numbers tied to a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    /// Wraps explicit values; the length must match the layout.
    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != layout.total_len() {
            return Err(Error::ShapeMismatch(format!(
                "value length {} does not match layout length {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> ParamVector {
        let values = vec![0.0; layout.total_len()];
        ParamVector { values, layout }
    }

    /// Same layout, every entry 1.0.
    pub fn ones(layout: Arc<Layout>) -> ParamVector {
        let values = vec![1.0; layout.total_len()];
        ParamVector { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Errs unless `other` shares this vector's layout.
    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "parameter vectors have different layouts".to_string(),
            ))
        }
    }

    /// Elementwise sum.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    /// Scalar multiple.
    pub fn scale(&self, k: f64) -> ParamVector {
        let values = self.values.iter().map(|a| a * k).collect();
        ParamVector { values, layout: self.layout.clone() }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    /// In-place `self += k * other`; the SGD hot path.
    pub fn add_scaled_in_place(&mut self, other: &ParamVector, k: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }
}

/// Mean over parameters of the across-vector population variance of each entry.
///
/// For `k` vectors this computes, per parameter `m`, the population variance
/// of the `k` values at `m` (divide by `k`), then averages those variances
/// into a single scalar.
pub fn variance_across(vectors: &[ParamVector]) -> Result<f64> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidInput("variance_across of empty list".to_string()))?;
    for v in &vectors[1..] {
        first.check_same_layout(v)?;
    }
    let k = vectors.len() as f64;
    let dim = first.len();
    if dim == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for m in 0..dim {
        let mean = vectors.iter().map(|v| v.values[m]).sum::<f64>() / k;
        let var = vectors
            .iter()
            .map(|v| {
                let d = v.values[m] - mean;
                d * d
            })
            .sum::<f64>()
            / k;
        total += var;
    }
    Ok(total / dim as f64)
}

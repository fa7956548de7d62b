//! Flat classification datasets and per-client shards.

use crate::error::{Error, Result};
use crate::nn::Batch;

/// A labelled dataset held as a flat row-major matrix.
///
/// Partitioners additionally require at least one sample per class; that is
/// checked where partitions are built, not here, because client-level
/// subsets legitimately cover only a few classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Dataset> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one sample".to_string()));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".to_string()));
        }
        if classes == 0 {
            return Err(Error::InvalidInput("class count must be positive".to_string()));
        }
        if inputs.len() != labels.len() * dim {
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
        Ok(Dataset { inputs, labels, dim, classes })
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

    /// Copies the given rows into a new dataset, keeping dim and classes.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!(
                "subset index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(inputs, self.dim, labels, self.classes)
    }

    /// Concatenates datasets that agree on dim and classes.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero datasets".to_string()))?;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != first.dim || p.classes != first.classes {
                return Err(Error::ShapeMismatch(
                    "concat over datasets with mixed dim or classes".to_string(),
                ));
            }
            inputs.extend_from_slice(&p.inputs);
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(inputs, first.dim, labels, first.classes)
    }

    /// Training batch over the given rows.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let sub = self.subset(indices)?;
        Batch::new(sub.inputs, sub.dim, sub.labels, sub.classes)
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch {
        Batch::new(self.inputs.clone(), self.dim, self.labels.clone(), self.classes)
            .expect("a valid dataset is a valid batch")
    }
}

/// One client's data: disjoint train and test subsets of its allocation.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub id: usize,
    pub train: Dataset,
    pub test: Dataset,
}

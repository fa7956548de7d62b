//! Synthetic Gaussian-cluster classification data.
//!
//! Class means sit at mutually separated points scaled by `separation`
//! (strictly positive); samples add unit isotropic noise. With
//! `classes <= dim` the means are the scaled coordinate axes, which keeps
//! pairwise mean distances equal; otherwise means are random unit
//! directions scaled the same way.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

pub fn gen_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidConfig {
            key: "classes".to_string(),
            message: format!("need at least 2 classes, got {classes}"),
        });
    }
    if dim == 0 {
        return Err(Error::InvalidConfig {
            key: "input_dim".to_string(),
            message: "feature dimension must be positive".to_string(),
        });
    }
    if per_class < 10 {
        return Err(Error::InvalidConfig {
            key: "per_class".to_string(),
            message: format!("need at least 10 samples per class, got {per_class}"),
        });
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::InvalidConfig {
            key: "separation".to_string(),
            message: format!("separation must be a positive real, got {separation}"),
        });
    }

    let means = class_means(classes, dim, separation, seed);
    let mut noise = stream(seed, "data-noise", &[]);
    let n = classes * per_class;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = noise.sample(StandardNormal);
                inputs.push(m + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, dim, labels, classes)
}

fn class_means(classes: usize, dim: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    if classes <= dim {
        (0..classes)
            .map(|c| {
                let mut m = vec![0.0; dim];
                m[c] = separation;
                m
            })
            .collect()
    } else {
        let mut rng = stream(seed, "data-means", &[]);
        (0..classes)
            .map(|_| {
                let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                raw.into_iter().map(|v| v * separation / norm).collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = gen_synthetic(3, 4, 10, 2.0, 9).unwrap();
        let b = gen_synthetic(3, 4, 10, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(3, 4, 10, 2.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_and_balance() {
        let ds = gen_synthetic(4, 3, 25, 1.0, 0).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.classes(), 4);
        for c in 0..4 {
            assert_eq!(ds.labels().iter().filter(|&&l| l == c).count(), 25);
        }
    }

    #[test]
    fn more_classes_than_dims_is_supported() {
        let ds = gen_synthetic(5, 2, 10, 3.0, 1).unwrap();
        assert_eq!(ds.len(), 50);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(gen_synthetic(1, 2, 10, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 0, 10, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 2, 9, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 2, 10, -0.5, 0).is_err());
        assert!(gen_synthetic(2, 2, 10, f64::NAN, 0).is_err());
        assert!(gen_synthetic(2, 2, 10, 0.0, 0).is_err());
    }

    #[test]
    fn class_means_are_separated() {
        let ds = gen_synthetic(2, 2, 100, 4.0, 3).unwrap();
        // empirical class means should sit near (4,0) and (0,4)
        let mut sums = [[0.0f64; 2]; 2];
        for i in 0..ds.len() {
            let l = ds.labels()[i];
            sums[l][0] += ds.row(i)[0];
            sums[l][1] += ds.row(i)[1];
        }
        let m0 = [sums[0][0] / 100.0, sums[0][1] / 100.0];
        let m1 = [sums[1][0] / 100.0, sums[1][1] / 100.0];
        assert!((m0[0] - 4.0).abs() < 0.5 && m0[1].abs() < 0.5, "{m0:?}");
        assert!((m1[1] - 4.0).abs() < 0.5 && m1[0].abs() < 0.5, "{m1:?}");
    }
}

//! Per-round measurements and their CSV encoding.

use serde::{Deserialize, Serialize};

/// One row of run output. Round 0 is the exploration phase (guided runs
/// only); training rounds start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean top-1 accuracy (percent) of the global model over every
    /// client's test set.
    pub mean_acc: f64,
    /// Population standard deviation of the per-client accuracies.
    pub std_acc: f64,
    /// Top-1 accuracy (percent) on the pooled test set.
    pub pooled_acc: f64,
    /// Mean per-parameter variance across the transmitted payloads.
    pub sigma2_dw: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// (client id, mean local step loss) for each surviving participant.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_losses: Vec<(usize, f64)>,
    /// Sampled clients whose updates were dropped for divergence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<usize>,
}

pub fn csv_header() -> &'static str {
    "round,mean_acc,std_acc,pooled_acc,sigma2_dw,bytes_up,bytes_down"
}

impl RoundMetrics {
    /// Formats the row with shortest round-trip float encoding, so equal
    /// trajectories produce byte-identical files.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.mean_acc,
            self.std_acc,
            self.pooled_acc,
            self.sigma2_dw,
            self.bytes_up,
            self.bytes_down
        )
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

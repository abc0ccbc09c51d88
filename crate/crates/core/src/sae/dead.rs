use serde::{Deserialize, Serialize};

use super::Dictionary;
use crate::eval::scan_dataset;
use crate::store::ActivationDataset;
use crate::{Error, Result};

/// Datapoints the activation threshold is quoted against.
pub const DEAD_REFERENCE_SAMPLES: u64 = 10_000_000;

/// `floor(threshold_per_10m · n / 10⁷)`.
pub fn scaled_dead_threshold(threshold_per_10m: u64, n_samples: u64) -> u64 {
    ((threshold_per_10m as u128 * n_samples as u128) / DEAD_REFERENCE_SAMPLES as u128) as u64
}

/// A feature is dead when it fires at most the scaled threshold number of
/// times; a feature that never fires is always dead.
pub fn dead_mask(fire_counts: &[u64], n_samples: u64, threshold_per_10m: u64) -> Vec<bool> {
    let limit = scaled_dead_threshold(threshold_per_10m, n_samples);
    fire_counts.iter().map(|&c| c == 0 || c <= limit).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadScan {
    pub count: usize,
    pub mask: Vec<bool>,
    pub fire_counts: Vec<u64>,
    pub scaled_threshold: u64,
}

/// Counts, per feature, the datapoints with a strictly positive activation
/// and applies [`dead_mask`].
pub fn dead_feature_scan(dict: &Dictionary, data: &ActivationDataset, threshold_per_10m: u64) -> Result<DeadScan> {
    if data.is_empty() {
        return Err(Error::arg("dead-feature scan needs a nonempty dataset"));
    }
    if threshold_per_10m == 0 {
        return Err(Error::arg("threshold_per_10m must be positive"));
    }
    let stats = scan_dataset(dict, data)?;
    let n = stats.n;
    let mask = dead_mask(&stats.fires, n, threshold_per_10m);
    Ok(DeadScan {
        count: mask.iter().filter(|&&d| d).count(),
        mask,
        fire_counts: stats.fires,
        scaled_threshold: scaled_dead_threshold(threshold_per_10m, n),
    })
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sae::Dictionary;
use crate::store::ActivationDataset;
use crate::{Error, Result};

/// Counts of a feature's positive activations per (token, bin). Bins are
/// equal-width half-open intervals `(lo, hi]` covering `(0, max_activation]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub feature_index: usize,
    pub max_activation: f64,
    /// `n_bins + 1` ascending edges from 0 to `max_activation`; empty when
    /// the feature never fires.
    pub bin_edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<u64>>,
}

impl TokenHistogram {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flatten().sum()
    }

    /// Writes `token,bin_low,bin_high,count` rows for nonzero cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["token", "bin_low", "bin_high", "count"]).map_err(err)?;
        for (token, bins) in &self.counts {
            for (b, &count) in bins.iter().enumerate().filter(|(_, &c)| c > 0) {
                w.write_record([
                    token.clone(),
                    self.bin_edges[b].to_string(),
                    self.bin_edges[b + 1].to_string(),
                    count.to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn bin_of(a: f64, width: f64, n_bins: usize) -> usize {
    let k = (a / width).ceil() as usize;
    k.clamp(1, n_bins) - 1
}

pub fn token_histogram<S: AsRef<str>>(
    feature: usize,
    dict: &Dictionary,
    data: &ActivationDataset,
    tokens: &[S],
    n_bins: usize,
) -> Result<TokenHistogram> {
    if tokens.len() != data.len() {
        return Err(Error::dim(format!("{} tokens for {} activation rows", tokens.len(), data.len())));
    }
    if n_bins == 0 {
        return Err(Error::arg("n_bins must be positive"));
    }
    if feature >= dict.d_hid() {
        return Err(Error::arg(format!("feature {feature} out of range for d_hid {}", dict.d_hid())));
    }
    let acts: Vec<f64> = (0..data.len())
        .map(|i| dict.activation(feature, data.row(i)).map(f64::from))
        .collect::<Result<_>>()?;
    let max = acts.iter().copied().fold(0.0, f64::max);
    let mut hist = TokenHistogram {
        feature_index: feature,
        max_activation: max,
        bin_edges: Vec::new(),
        counts: BTreeMap::new(),
    };
    if max <= 0.0 {
        return Ok(hist);
    }
    let width = max / n_bins as f64;
    hist.bin_edges = (0..=n_bins).map(|k| if k == n_bins { max } else { k as f64 * width }).collect();
    for (a, tok) in acts.iter().zip(tokens) {
        if *a > 0.0 {
            let bins = hist.counts.entry(tok.as_ref().to_owned()).or_insert_with(|| vec![0; n_bins]);
            bins[bin_of(*a, width, n_bins)] += 1;
        }
    }
    Ok(hist)
}

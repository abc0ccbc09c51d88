//! Feature diagnostics: FVU, sparsity, dead features, activation moments,
//! token histograms and logit effects.

mod histogram;
mod logit;
mod moments;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::par::*;
use crate::sae::{dead_mask, Dictionary};
use crate::store::{ActivationDataset, BatchReader, DimStats};
use crate::{Error, Result};

pub use histogram::{token_histogram, TokenHistogram};
pub use logit::{logit_effect, unembed_feature, Unembedding};
pub use moments::{
    activation_moments, feature_moments, moment_score_correlation, pearson, MomentAccumulator,
    MomentCorrelations, MomentStats,
};

/// Anything that maps activations to nonnegative codes and back.
pub trait Codec: Sync {
    fn d_in(&self) -> usize;
    fn n_features(&self) -> usize;
    /// Codes for each row of `x`.
    fn encode_rows(&self, x: ArrayView2<'_, f32>) -> Array2<f32>;
    /// Reconstructed activations (including any centring offset) for each
    /// row of codes.
    fn reconstruct_rows(&self, codes: ArrayView2<'_, f32>) -> Array2<f32>;
}

impl Codec for Dictionary {
    fn d_in(&self) -> usize {
        Dictionary::d_in(self)
    }

    fn n_features(&self) -> usize {
        self.d_hid()
    }

    fn encode_rows(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut c = x.dot(&self.encoder().t()) + self.bias();
        c.mapv_inplace(|v| v.max(0.0));
        c
    }

    fn reconstruct_rows(&self, codes: ArrayView2<'_, f32>) -> Array2<f32> {
        codes.dot(&self.decoder())
    }
}

/// Sums gathered in one pass of a codec over data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanStats {
    pub n: u64,
    /// Σ‖x − x̂‖².
    pub reconstruction: f64,
    /// Σ‖c‖₁.
    pub l1: f64,
    /// Σ ‖c‖₀.
    pub l0: u64,
    /// Per-feature count of datapoints with a strictly positive code.
    pub fires: Vec<u64>,
    pub dims: DimStats,
}

impl ScanStats {
    fn new(n_features: usize, d_in: usize) -> Self {
        ScanStats {
            n: 0,
            reconstruction: 0.0,
            l1: 0.0,
            l0: 0,
            fires: vec![0; n_features],
            dims: DimStats::new(d_in),
        }
    }

    fn merge(&mut self, other: &ScanStats) {
        self.n += other.n;
        self.reconstruction += other.reconstruction;
        self.l1 += other.l1;
        self.l0 += other.l0;
        for (a, b) in self.fires.iter_mut().zip(&other.fires) {
            *a += b;
        }
        self.dims.merge(&other.dims);
    }

    /// Σ‖x − x̂‖² / Σ‖x − x̄‖².
    pub fn fvu(&self) -> Result<f64> {
        let scatter = self.dims.total_scatter();
        if scatter <= 0.0 {
            return Err(Error::Validation("data has zero variance; FVU is undefined".into()));
        }
        Ok(self.reconstruction / scatter)
    }

    pub fn mean_l0(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::arg("no samples"));
        }
        Ok(self.l0 as f64 / self.n as f64)
    }
}

fn scan_chunk<C: Codec + ?Sized>(codec: &C, x: ArrayView2<'_, f32>) -> ScanStats {
    let codes = codec.encode_rows(x);
    let recon = codec.reconstruct_rows(codes.view());
    let mut stats = ScanStats::new(codec.n_features(), codec.d_in());
    stats.n = x.nrows() as u64;
    stats.reconstruction = x
        .iter()
        .zip(recon.iter())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    for row in codes.rows() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                stats.l0 += 1;
                stats.fires[j] += 1;
                stats.l1 += f64::from(c);
            }
        }
    }
    stats.dims = DimStats::from_batch(x);
    stats
}

/// One pass over `x` in fixed row chunks.
pub fn scan_view<C: Codec + ?Sized>(codec: &C, x: ArrayView2<'_, f32>) -> Result<ScanStats> {
    if x.ncols() != codec.d_in() {
        return Err(Error::dim(format!("data has d_in {}, codec expects {}", x.ncols(), codec.d_in())));
    }
    let parts: Vec<ScanStats> = crate::par::row_chunks(x.nrows())
        .into_par_iter()
        .map(|r| scan_chunk(codec, x.slice(s![r, ..])))
        .collect();
    let mut total = ScanStats::new(codec.n_features(), codec.d_in());
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

pub fn scan_dataset<C: Codec + ?Sized>(codec: &C, data: &ActivationDataset) -> Result<ScanStats> {
    scan_view(codec, data.view())
}

/// One pass over a streamed `.sact` file.
pub fn scan_stream<C: Codec + ?Sized>(codec: &C, reader: BatchReader) -> Result<ScanStats> {
    let mut total = ScanStats::new(codec.n_features(), codec.d_in());
    for batch in reader {
        total.merge(&scan_view(codec, batch?.view())?);
    }
    Ok(total)
}

/// Fraction of variance unexplained by the codec's reconstructions.
pub fn fvu<C: Codec + ?Sized>(codec: &C, data: &ActivationDataset) -> Result<f64> {
    scan_dataset(codec, data)?.fvu()
}

/// Mean number of strictly positive entries per code.
pub fn mean_l0<'a, I>(codes: I) -> Result<f64>
where
    I: IntoIterator<Item = ArrayView1<'a, f32>>,
{
    let mut n = 0u64;
    let mut active = 0u64;
    for c in codes {
        n += 1;
        active += c.iter().filter(|&&v| v > 0.0).count() as u64;
    }
    if n == 0 {
        return Err(Error::arg("mean_l0 of an empty code stream"));
    }
    Ok(active as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fvu: f64,
    pub mean_l0: f64,
    pub dead_count: usize,
    pub n_samples: u64,
}

pub fn evaluate<C: Codec + ?Sized>(codec: &C, data: &ActivationDataset, dead_threshold_per_10m: u64) -> Result<EvalReport> {
    report_from(scan_dataset(codec, data)?, dead_threshold_per_10m)
}

pub fn evaluate_stream<C: Codec + ?Sized>(codec: &C, reader: BatchReader, dead_threshold_per_10m: u64) -> Result<EvalReport> {
    report_from(scan_stream(codec, reader)?, dead_threshold_per_10m)
}

fn report_from(stats: ScanStats, threshold: u64) -> Result<EvalReport> {
    Ok(EvalReport {
        fvu: stats.fvu()?,
        mean_l0: stats.mean_l0()?,
        dead_count: dead_mask(&stats.fires, stats.n, threshold).iter().filter(|&&d| d).count(),
        n_samples: stats.n,
    })
}

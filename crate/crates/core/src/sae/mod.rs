//! The tied (or untied) ReLU sparse autoencoder.
//!
//! Encoder: `c = ReLU(M x + b)`. Decoder: `x̂ = M_dᵀ c = Σ_i c_i f_i`, where
//! `M_d = M` for tied dictionaries. Loss per sample:
//! `‖x − x̂‖² + α‖c‖₁`. Decoder rows (the dictionary features) are kept at
//! unit norm throughout training.

mod adam;
mod dead;
pub mod kernels;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::normalize_rows_f32;
use crate::par::*;
use crate::store::{read_sdic, write_sdic, SdicRecord};
use crate::{Error, Result};

pub use adam::{Adam, AdamParams};
pub use dead::{dead_feature_scan, dead_mask, scaled_dead_threshold, DeadScan};
pub(crate) use train::csv_err;
pub use train::{train, train_from, train_with_observer, LossPoint, StepInfo, TrainConfig, TrainReport, Trainer};

/// Reconstruction and sparsity terms of the loss. `sparsity` already
/// includes the α factor, so `total = reconstruction + sparsity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
}

/// A learned feature dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub(crate) encoder: Array2<f32>,
    pub(crate) bias: Array1<f32>,
    pub(crate) decoder: Option<Array2<f32>>,
}

impl Dictionary {
    /// Builds a dictionary from explicit parameters. Rows are taken as given;
    /// use [`Dictionary::normalize`] to project onto the unit-norm constraint.
    pub fn new(encoder: Array2<f32>, bias: Array1<f32>, decoder: Option<Array2<f32>>) -> Result<Self> {
        let (d_hid, d_in) = encoder.dim();
        if d_hid == 0 || d_in == 0 {
            return Err(Error::dim("dictionary needs d_hid >= 1 and d_in >= 1"));
        }
        if bias.len() != d_hid {
            return Err(Error::dim(format!("bias has length {}, expected {d_hid}", bias.len())));
        }
        if let Some(dec) = &decoder {
            if dec.dim() != (d_hid, d_in) {
                return Err(Error::dim(format!(
                    "decoder is {:?}, encoder is {:?}",
                    dec.dim(),
                    encoder.dim()
                )));
            }
        }
        let finite = encoder.iter().chain(bias.iter()).chain(decoder.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("dictionary holds non-finite entries".into()));
        }
        Ok(Dictionary {
            encoder: encoder.as_standard_layout().into_owned(),
            bias,
            decoder: decoder.map(|d| d.as_standard_layout().into_owned()),
        })
    }

    /// Tied dictionary with the given feature rows and zero bias.
    pub fn tied(features: Array2<f32>) -> Result<Self> {
        let d_hid = features.nrows();
        Self::new(features, Array1::zeros(d_hid), None)
    }

    /// Gaussian rows projected to unit norm, zero bias. Untied dictionaries
    /// start with the decoder equal to the encoder.
    pub fn random<R: Rng>(d_in: usize, d_hid: usize, tied: bool, rng: &mut R) -> Result<Self> {
        if d_in == 0 || d_hid == 0 {
            return Err(Error::dim("dictionary needs d_hid >= 1 and d_in >= 1"));
        }
        let mut m = Array2::from_shape_simple_fn((d_hid, d_in), || rng.sample::<f32, _>(StandardNormal));
        normalize_rows_f32(&mut m);
        let decoder = (!tied).then(|| m.clone());
        Self::new(m, Array1::zeros(d_hid), decoder)
    }

    pub fn d_hid(&self) -> usize {
        self.encoder.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.encoder.ncols()
    }

    pub fn is_tied(&self) -> bool {
        self.decoder.is_none()
    }

    pub fn encoder(&self) -> ArrayView2<'_, f32> {
        self.encoder.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f32> {
        self.bias.view()
    }

    /// The decoder matrix: `M_d` when untied, `M` otherwise. Its rows are the
    /// dictionary features.
    pub fn decoder(&self) -> ArrayView2<'_, f32> {
        self.decoder.as_ref().unwrap_or(&self.encoder).view()
    }

    pub fn feature(&self, i: usize) -> ArrayView1<'_, f32> {
        self.decoder.as_ref().unwrap_or(&self.encoder).row(i)
    }

    /// Renormalises the constrained rows (decoder features) to unit length.
    pub fn normalize(&mut self) {
        match &mut self.decoder {
            Some(dec) => normalize_rows_f32(dec),
            None => normalize_rows_f32(&mut self.encoder),
        }
    }

    /// Largest `|‖f_i‖₂ − 1|` over the decoder rows.
    pub fn max_row_norm_error(&self) -> f64 {
        self.decoder()
            .rows()
            .into_iter()
            .map(|r| (crate::linalg::norm_f32(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.d_in() {
            return Err(Error::dim(format!("input has length {len}, dictionary expects {}", self.d_in())));
        }
        Ok(())
    }

    pub fn encode(&self, x: ArrayView1<'_, f32>) -> Result<Array1<f32>> {
        self.check_input(x.len())?;
        let mut c = self.encoder.dot(&x) + &self.bias;
        c.mapv_inplace(|v| v.max(0.0));
        Ok(c)
    }

    /// Single feature activation `max(0, ⟨M_i, x⟩ + b_i)`.
    pub fn activation(&self, feature: usize, x: ArrayView1<'_, f32>) -> Result<f32> {
        self.check_input(x.len())?;
        if feature >= self.d_hid() {
            return Err(Error::arg(format!("feature {feature} out of range for d_hid {}", self.d_hid())));
        }
        Ok((self.encoder.row(feature).dot(&x) + self.bias[feature]).max(0.0))
    }

    pub fn decode(&self, c: ArrayView1<'_, f32>) -> Result<Array1<f32>> {
        if c.len() != self.d_hid() {
            return Err(Error::dim(format!("code has length {}, dictionary has {} features", c.len(), self.d_hid())));
        }
        Ok(c.dot(&self.decoder()))
    }

    /// Codes for every row of `x`, computed in fixed row chunks.
    pub fn encode_batch(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        self.check_input(x.ncols())?;
        let parts: Vec<Array2<f32>> = crate::par::row_chunks(x.nrows())
            .into_par_iter()
            .map(|r| {
                let mut c = x.slice(ndarray::s![r, ..]).dot(&self.encoder.t()) + &self.bias;
                c.mapv_inplace(|v| v.max(0.0));
                c
            })
            .collect();
        Ok(concat_rows(parts, self.d_hid()))
    }

    pub fn decode_batch(&self, c: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if c.ncols() != self.d_hid() {
            return Err(Error::dim(format!("codes have {} columns, dictionary has {} features", c.ncols(), self.d_hid())));
        }
        let dec = self.decoder();
        let parts: Vec<Array2<f32>> = crate::par::row_chunks(c.nrows())
            .into_par_iter()
            .map(|r| c.slice(ndarray::s![r, ..]).dot(&dec))
            .collect();
        Ok(concat_rows(parts, self.d_in()))
    }

    pub fn loss(&self, x: ArrayView1<'_, f32>, alpha: f64) -> Result<LossParts> {
        if alpha < 0.0 {
            return Err(Error::arg(format!("alpha must be >= 0, got {alpha}")));
        }
        let c = self.encode(x)?;
        let x_hat = self.decode(c.view())?;
        let reconstruction: f64 = x
            .iter()
            .zip(&x_hat)
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum();
        let sparsity = alpha * c.iter().map(|&v| f64::from(v)).sum::<f64>();
        Ok(LossParts {
            total: reconstruction + sparsity,
            reconstruction,
            sparsity,
        })
    }

    pub fn to_record(&self) -> SdicRecord {
        let tied = self.is_tied();
        SdicRecord {
            d_hid: self.d_hid(),
            d_in: self.d_in(),
            flags: if tied { crate::store::FLAG_TIED } else { 0 },
            m: self.encoder.iter().copied().collect(),
            b: self.bias.to_vec(),
            m_d: self.decoder.as_ref().map(|d| d.iter().copied().collect()),
            mean: None,
        }
    }

    pub fn from_record(rec: SdicRecord) -> Result<Self> {
        let shape = (rec.d_hid, rec.d_in);
        let m = Array2::from_shape_vec(shape, rec.m).map_err(|e| Error::dim(e.to_string()))?;
        let m_d = rec
            .m_d
            .map(|v| Array2::from_shape_vec(shape, v).map_err(|e| Error::dim(e.to_string())))
            .transpose()?;
        Self::new(m, Array1::from(rec.b), m_d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_sdic(path, &self.to_record())
    }

    /// Loads a `.sdic` file. Direction-set files load as a tied dictionary
    /// over their directions (their mean offset is ignored).
    pub fn load(path: &Path) -> Result<Self> {
        let mut rec = read_sdic(path)?;
        rec.mean = None;
        Self::from_record(rec)
    }
}

pub(crate) fn concat_rows(parts: Vec<Array2<f32>>, ncols: usize) -> Array2<f32> {
    if parts.is_empty() {
        return Array2::zeros((0, ncols));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("chunks share column count")
}

use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kernels::{batch_loss_and_grad, Params};
use super::{dead_mask, Adam, AdamParams, Dictionary, LossParts};
use crate::eval::scan_dataset;
use crate::store::ActivationDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// L1 coefficient α.
    pub alpha: f64,
    /// Dictionary size ratio R; `d_hid = round(R · d_in)`.
    pub ratio: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub tied: bool,
    /// Re-draw dead features at epoch boundaries.
    pub dead_reinit: bool,
    pub dead_threshold_per_10m: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-3,
            ratio: 1.0,
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 1024,
            seed: 0,
            tied: true,
            dead_reinit: false,
            dead_threshold_per_10m: 10,
        }
    }
}

impl TrainConfig {
    pub fn d_hid(&self, d_in: usize) -> usize {
        (self.ratio * d_in as f64).round() as usize
    }

    pub fn validate(&self, d_in: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::arg(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.ratio.is_finite() && self.ratio > 0.0) || self.d_hid(d_in) < 1 {
            return Err(Error::arg(format!("ratio {} gives no features for d_in {d_in}", self.ratio)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::arg(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if self.dead_threshold_per_10m == 0 {
            return Err(Error::arg("dead_threshold_per_10m must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub total: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub alpha: f64,
    pub d_in: usize,
    pub d_hid: usize,
    pub final_loss: f64,
    pub final_reconstruction_loss: f64,
    pub final_sparsity_loss: f64,
    pub mean_l0: f64,
    /// `None` when the training data has zero variance.
    pub fvu: Option<f64>,
    pub dead_feature_count: usize,
    pub reinitialized_features: usize,
    pub steps: u64,
    pub loss_curve: Vec<LossPoint>,
}

impl TrainReport {
    /// Writes the loss curve as `step,total,reconstruction,sparsity`.
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "total", "reconstruction", "sparsity"])
            .map_err(|e| csv_err(path, e))?;
        for p in &self.loss_curve {
            w.write_record([
                p.step.to_string(),
                p.total.to_string(),
                p.reconstruction.to_string(),
                p.sparsity.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// What an observer sees after each optimiser step.
pub struct StepInfo<'a> {
    pub step: u64,
    pub epoch: u32,
    /// Mean loss of the batch, measured before the update.
    pub loss: LossParts,
    pub dictionary: &'a Dictionary,
}

/// Optimiser state for one dictionary.
pub struct Trainer {
    dict: Dictionary,
    alpha: f64,
    adam_encoder: Adam,
    adam_bias: Adam,
    adam_decoder: Option<Adam>,
    step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(d_in: usize, config: &TrainConfig) -> Result<Self> {
        config.validate(d_in)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d_hid = config.d_hid(d_in);
        let dict = Dictionary::random(d_in, d_hid, config.tied, &mut rng)?;
        Ok(Self::from_dictionary(dict, config, rng))
    }

    /// Continues training an existing dictionary.
    pub fn resume(dict: Dictionary, config: &TrainConfig) -> Result<Self> {
        config.validate(dict.d_in())?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::from_dictionary(dict, config, rng))
    }

    fn from_dictionary(mut dict: Dictionary, config: &TrainConfig, rng: ChaCha8Rng) -> Self {
        dict.normalize();
        let adam = AdamParams {
            learning_rate: config.learning_rate,
            ..AdamParams::default()
        };
        let n = dict.d_hid() * dict.d_in();
        Trainer {
            adam_encoder: Adam::new(n, adam),
            adam_bias: Adam::new(dict.d_hid(), adam),
            adam_decoder: (!dict.is_tied()).then(|| Adam::new(n, adam)),
            alpha: config.alpha,
            dict,
            step: 0,
            rng,
        }
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn into_dictionary(self) -> Dictionary {
        self.dict
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam step on the mean loss of `batch`, followed by projecting the
    /// decoder rows back to unit norm. Returns the pre-update batch loss.
    pub fn step(&mut self, batch: ArrayView2<'_, f32>) -> Result<LossParts> {
        if batch.ncols() != self.dict.d_in() {
            return Err(Error::dim(format!(
                "batch has {} columns, dictionary expects {}",
                batch.ncols(),
                self.dict.d_in()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::arg("empty batch"));
        }
        let params = Params {
            encoder: self.dict.encoder.view(),
            bias: self.dict.bias.view(),
            decoder: self.dict.decoder.as_ref().map(|d| d.view()),
        };
        let grad = batch_loss_and_grad(params, batch, self.alpha as f32);
        let (reconstruction, sparsity) = grad.mean_terms(self.alpha);
        let total = reconstruction + sparsity;
        if !total.is_finite() {
            return Err(Error::Divergence { step: self.step + 1 });
        }
        let grad = grad.into_mean();

        self.adam_encoder.step(
            self.dict.encoder.as_slice_mut().expect("standard layout"),
            grad.encoder.as_standard_layout().as_slice().expect("standard layout"),
        );
        self.adam_bias.step(
            self.dict.bias.as_slice_mut().expect("contiguous"),
            grad.bias.as_slice().expect("contiguous"),
        );
        if let (Some(dec), Some(adam), Some(g)) = (&mut self.dict.decoder, &mut self.adam_decoder, &grad.decoder) {
            adam.step(
                dec.as_slice_mut().expect("standard layout"),
                g.as_standard_layout().as_slice().expect("standard layout"),
            );
        }
        self.dict.normalize();
        self.step += 1;
        if self.dict.encoder.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: self.step });
        }
        Ok(LossParts {
            total,
            reconstruction,
            sparsity,
        })
    }

    /// Re-draws the masked features as random unit rows with zero bias and
    /// fresh optimiser state.
    pub fn reinit_features(&mut self, mask: &[bool]) -> usize {
        let d_in = self.dict.d_in();
        let mut count = 0;
        for (i, _) in mask.iter().enumerate().filter(|(_, &dead)| dead) {
            let mut row: Vec<f32> = (0..d_in).map(|_| self.rng.sample(StandardNormal)).collect();
            let n = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v = (f64::from(*v) / n) as f32);
            self.dict.encoder.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            if let Some(dec) = &mut self.dict.decoder {
                dec.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            }
            self.dict.bias[i] = 0.0;
            self.adam_encoder.reset_range(i * d_in, d_in);
            self.adam_bias.reset_range(i, 1);
            if let Some(adam) = &mut self.adam_decoder {
                adam.reset_range(i * d_in, d_in);
            }
            count += 1;
        }
        count
    }

    fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }
}

pub fn train(data: &ActivationDataset, config: &TrainConfig) -> Result<(Dictionary, TrainReport)> {
    train_with_observer(data, config, |_| {})
}

/// Trains a dictionary for `config.epochs` passes over `data` in seeded
/// random batch order, calling `observer` after every step. The report's
/// final figures come from one more pass over `data` with the trained
/// dictionary.
pub fn train_with_observer<F>(data: &ActivationDataset, config: &TrainConfig, mut observer: F) -> Result<(Dictionary, TrainReport)>
where
    F: FnMut(&StepInfo<'_>),
{
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    run(Trainer::new(data.d_in(), config)?, data, config, &mut observer)
}

/// Like [`train`], but starting from `initial` instead of a random
/// dictionary. `config.ratio` and `config.tied` are ignored.
pub fn train_from(initial: Dictionary, data: &ActivationDataset, config: &TrainConfig) -> Result<(Dictionary, TrainReport)> {
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    if initial.d_in() != data.d_in() {
        return Err(Error::dim(format!(
            "dictionary d_in {} does not match data width {}",
            initial.d_in(),
            data.d_in()
        )));
    }
    run(Trainer::resume(initial, config)?, data, config, &mut |_| {})
}

fn run(
    mut trainer: Trainer,
    data: &ActivationDataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&StepInfo<'_>),
) -> Result<(Dictionary, TrainReport)> {
    let mut loss_curve = Vec::new();
    let mut reinitialized = 0;
    for epoch in 0..config.epochs {
        let order = trainer.epoch_order(data.len());
        for idx in order.chunks(config.batch_size) {
            let batch = data.view().select(Axis(0), idx);
            let loss = trainer.step(batch.view())?;
            loss_curve.push(LossPoint {
                step: trainer.steps(),
                total: loss.total,
                reconstruction: loss.reconstruction,
                sparsity: loss.sparsity,
            });
            observer(&StepInfo {
                step: trainer.steps(),
                epoch,
                loss,
                dictionary: trainer.dictionary(),
            });
        }
        if config.dead_reinit && epoch + 1 < config.epochs {
            let stats = scan_dataset(trainer.dictionary(), data)?;
            let mask = dead_mask(&stats.fires, stats.n, config.dead_threshold_per_10m);
            let k = trainer.reinit_features(&mask);
            log::debug!("epoch {epoch}: reinitialised {k} dead features");
            reinitialized += k;
        }
    }

    let steps = trainer.steps();
    let dict = trainer.into_dictionary();
    let stats = scan_dataset(&dict, data)?;
    let n = stats.n as f64;
    let reconstruction = stats.reconstruction / n;
    let sparsity = config.alpha * stats.l1 / n;
    let dead = dead_mask(&stats.fires, stats.n, config.dead_threshold_per_10m);
    let report = TrainReport {
        alpha: config.alpha,
        d_in: dict.d_in(),
        d_hid: dict.d_hid(),
        final_loss: reconstruction + sparsity,
        final_reconstruction_loss: reconstruction,
        final_sparsity_loss: sparsity,
        mean_l0: stats.l0 as f64 / n,
        fvu: stats.fvu().ok(),
        dead_feature_count: dead.iter().filter(|&&d| d).count(),
        reinitialized_features: reinitialized,
        steps,
        loss_curve,
    };
    Ok((dict, report))
}

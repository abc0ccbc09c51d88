//! Sparse dictionary learning for language-model activations.
//!
//! The crate learns overcomplete, sparse feature dictionaries with an
//! L1-penalised ReLU autoencoder and provides the surrounding machinery:
//!
//! - [`store`]: `.sact` activation datasets, `.sdic` dictionaries, token and
//!   vocabulary side files.
//! - [`synth`]: synthetic superposition data with known features and the MMCS
//!   recovery metric.
//! - [`sae`]: encoder/decoder, loss, Adam training with row normalisation and
//!   dead-feature accounting.
//! - [`baselines`]: PCA, FastICA, random directions, the neuron basis and
//!   top-K coding.
//! - [`eval`]: FVU, mean L0, activation moments, token histograms, logit
//!   effects.
//! - [`autointerp`]: the explain/simulate/score protocol behind a pluggable
//!   simulator client.
//! - [`patching`]: feature-level activation patching, KL measurement, feature
//!   ordering and ablation-based causal trees.
//!
//! Data-parallel loops go through [`par`], which is rayon when the `parallel`
//! feature is on and plain iterators otherwise. Reductions always combine
//! fixed-size chunks in index order, so both builds produce identical bits.

pub mod autointerp;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod par;
pub mod patching;
pub mod sae;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use sae::{Dictionary, TrainConfig, TrainReport};
pub use store::ActivationDataset;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::sae::Dictionary;
use crate::store::{read_dataset, read_vocab};
use crate::{Error, Result};

/// A vocab × d_in unembedding matrix with its token strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Unembedding {
    pub matrix: Array2<f32>,
    pub vocab: Vec<String>,
}

impl Unembedding {
    pub fn new(matrix: Array2<f32>, vocab: Vec<String>) -> Result<Self> {
        if matrix.nrows() != vocab.len() {
            return Err(Error::dim(format!(
                "unembedding has {} rows but vocabulary has {} tokens",
                matrix.nrows(),
                vocab.len()
            )));
        }
        Ok(Unembedding { matrix, vocab })
    }

    /// Loads a `.sact` matrix (one row per token id) and its JSON-lines
    /// vocabulary.
    pub fn load(matrix: &Path, vocab: &Path) -> Result<Self> {
        Self::new(read_dataset(matrix)?.into_inner(), read_vocab(vocab)?)
    }
}

fn check_feature(feature: usize, dict: &Dictionary) -> Result<()> {
    if feature >= dict.d_hid() {
        return Err(Error::arg(format!("feature {feature} out of range for d_hid {}", dict.d_hid())));
    }
    Ok(())
}

fn apply(unembed: ArrayView2<'_, f32>, v: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(
        unembed
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(v).map(|(&u, &x)| f64::from(u) * x).sum()),
    )
}

/// Change in logits when the feature's decoded contribution `c_f · f` is
/// removed from `x`, i.e. `U(x − c_f f) − U x`. Zero when the feature is
/// inactive on `x`.
pub fn logit_effect(
    feature: usize,
    dict: &Dictionary,
    x: ArrayView1<'_, f32>,
    unembed: ArrayView2<'_, f32>,
) -> Result<Array1<f64>> {
    check_feature(feature, dict)?;
    if unembed.ncols() != dict.d_in() {
        return Err(Error::dim(format!(
            "unembedding has {} columns, dictionary d_in is {}",
            unembed.ncols(),
            dict.d_in()
        )));
    }
    let c = f64::from(dict.activation(feature, x)?);
    if c == 0.0 {
        return Ok(Array1::zeros(unembed.nrows()));
    }
    let delta = dict.feature(feature).mapv(|f| -c * f64::from(f));
    Ok(apply(unembed, &delta))
}

/// Tokens ranked by `U f` descending (lower token id first on ties).
pub fn unembed_feature(
    feature: usize,
    dict: &Dictionary,
    unembed: ArrayView2<'_, f32>,
    vocab: &[String],
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    check_feature(feature, dict)?;
    if unembed.ncols() != dict.d_in() || unembed.nrows() != vocab.len() {
        return Err(Error::dim("unembedding shape disagrees with dictionary or vocabulary"));
    }
    if top_n > vocab.len() {
        return Err(Error::arg(format!("top_n {top_n} exceeds vocabulary size {}", vocab.len())));
    }
    let f = dict.feature(feature).mapv(f64::from);
    let logits = apply(unembed, &f);
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(top_n).map(|i| (vocab[i].clone(), logits[i])).collect())
}

//! Synthetic superposition data: activations built as sparse nonnegative
//! combinations of known unit vectors, and the MMCS metric for how well a
//! learned dictionary recovers them.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::normalize_rows;
use crate::par::*;
use crate::sae::Dictionary;
use crate::store::{ActivationDataset, DatasetMeta, DatasetWriter, HookPoint};
use crate::{Error, Result};

/// Samples generated per independent RNG stream.
const GEN_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_gt: usize,
    pub d: usize,
    pub n_samples: usize,
    /// Expected number of active features per sample.
    pub avg_active: f64,
    /// Mean of the exponential coefficient magnitudes.
    pub coeff_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_gt == 0 || self.d == 0 || self.n_samples == 0 {
            return Err(Error::arg("n_gt, d and n_samples must be positive"));
        }
        let reals = [self.avg_active, self.coeff_scale, self.noise_sigma];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("synthetic parameters must be finite"));
        }
        if self.avg_active <= 0.0 || self.coeff_scale <= 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::arg("avg_active and coeff_scale must be positive, noise_sigma >= 0"));
        }
        if self.avg_active > self.n_gt as f64 {
            return Err(Error::arg(format!(
                "avg_active {} exceeds n_gt {}",
                self.avg_active, self.n_gt
            )));
        }
        Ok(())
    }
}

/// Unit-norm ground-truth feature vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDictionary {
    vectors: Array2<f64>,
}

impl GroundTruthDictionary {
    pub fn new(mut vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::dim("ground truth needs n_gt >= 1 and d >= 1"));
        }
        if vectors.rows().into_iter().any(|r| crate::linalg::norm(r) == 0.0) {
            return Err(Error::Validation("ground-truth feature with zero norm".into()));
        }
        normalize_rows(&mut vectors);
        Ok(GroundTruthDictionary { vectors })
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn n_gt(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn d(&self) -> usize {
        self.vectors.ncols()
    }

    /// The features as a tied dictionary with zero bias.
    pub fn to_dictionary(&self) -> Dictionary {
        Dictionary::tied(self.vectors.mapv(|v| v as f32)).expect("validated shape")
    }
}

/// Row-compressed nonnegative coefficients, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    pub n_features: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl SparseCodes {
    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn dense_row(&self, i: usize) -> Array1<f32> {
        let mut out = Array1::zeros(self.n_features);
        let (idx, vals) = self.row(i);
        for (&j, &v) in idx.iter().zip(vals) {
            out[j as usize] = v;
        }
        out
    }

    pub fn mean_l0(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.0).count() as f64 / self.n_rows().max(1) as f64
    }

    /// Writes the dense coefficient matrix as a `.sact` with `d_in = n_gt`.
    pub fn write(&self, path: &Path, meta: &DatasetMeta) -> Result<()> {
        let mut w = DatasetWriter::create(path, self.n_features, meta.clone())?;
        for i in 0..self.n_rows() {
            w.push(self.dense_row(i).as_slice().expect("contiguous"))?;
        }
        w.finish().map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub truth: GroundTruthDictionary,
    pub dataset: ActivationDataset,
    pub codes: SparseCodes,
}

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Chunk {
    x: Vec<f32>,
    counts: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

fn generate_chunk(cfg: &SyntheticConfig, truth: &Array2<f64>, chunk: usize, rows: usize) -> Chunk {
    let mut rng = chunk_rng(cfg.seed, chunk as u64 + 1);
    let p = cfg.avg_active / cfg.n_gt as f64;
    let exp = Exp::new(1.0 / cfg.coeff_scale).expect("positive rate");
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
    let mut out = Chunk {
        x: Vec::with_capacity(rows * cfg.d),
        counts: Vec::with_capacity(rows),
        indices: Vec::new(),
        values: Vec::new(),
    };
    let mut x = vec![0.0f64; cfg.d];
    for _ in 0..rows {
        x.iter_mut().for_each(|v| *v = 0.0);
        let mut k = 0;
        for j in 0..cfg.n_gt {
            if rng.random::<f64>() < p {
                let a: f64 = rng.sample(exp);
                for (xi, gi) in x.iter_mut().zip(truth.row(j)) {
                    *xi += a * gi;
                }
                out.indices.push(j as u32);
                out.values.push(a as f32);
                k += 1;
            }
        }
        if cfg.noise_sigma > 0.0 {
            x.iter_mut().for_each(|v| *v += rng.sample(noise));
        }
        out.counts.push(k);
        out.x.extend(x.iter().map(|&v| v as f32));
    }
    out
}

/// Draws ground-truth directions (isotropic Gaussian, normalised), then for
/// each sample activates every feature independently with probability
/// `avg_active / n_gt`, with Exponential(mean `coeff_scale`) magnitudes, and
/// adds N(0, σ²) noise. Samples are generated in fixed chunks, each with its
/// own RNG stream, so output depends only on the config.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = chunk_rng(cfg.seed, 0);
    let raw = Array2::from_shape_simple_fn((cfg.n_gt, cfg.d), || rng.sample::<f64, _>(StandardNormal));
    let truth = GroundTruthDictionary::new(raw)?;

    let n_chunks = cfg.n_samples.div_ceil(GEN_CHUNK);
    let chunks: Vec<Chunk> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let rows = GEN_CHUNK.min(cfg.n_samples - c * GEN_CHUNK);
            generate_chunk(cfg, &truth.vectors, c, rows)
        })
        .collect();

    let mut x = Vec::with_capacity(cfg.n_samples * cfg.d);
    let mut codes = SparseCodes {
        n_features: cfg.n_gt,
        indptr: vec![0],
        indices: Vec::new(),
        values: Vec::new(),
    };
    for ch in chunks {
        x.extend_from_slice(&ch.x);
        for k in ch.counts {
            let last = *codes.indptr.last().unwrap();
            codes.indptr.push(last + k);
        }
        codes.indices.extend(ch.indices);
        codes.values.extend(ch.values);
    }
    let dataset = ActivationDataset::new(Array2::from_shape_vec((cfg.n_samples, cfg.d), x).expect("sized"))?;
    Ok(SyntheticData { truth, dataset, codes })
}

pub fn synthetic_meta() -> DatasetMeta {
    DatasetMeta {
        model_name: "synthetic".into(),
        layer_index: 0,
        hook_point: HookPoint::Other,
        source_corpus: "synthetic superposition".into(),
        created_by: "dictlearn synth".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Mean over ground-truth features of the best cosine to any learned row.
    pub mmcs: f64,
    pub per_feature_max_cos: Vec<f64>,
    pub matched_index: Vec<usize>,
}

/// Mean max cosine similarity between each ground-truth feature and the
/// learned rows. Zero learned rows contribute cosine 0; ties go to the lowest
/// learned index.
pub fn mmcs(learned: ArrayView2<'_, f32>, truth: &GroundTruthDictionary) -> Result<RecoveryReport> {
    if learned.nrows() == 0 {
        return Err(Error::arg("learned dictionary is empty"));
    }
    if learned.ncols() != truth.d() {
        return Err(Error::dim(format!(
            "learned rows have dimension {}, ground truth has {}",
            learned.ncols(),
            truth.d()
        )));
    }
    let mut l = learned.mapv(f64::from);
    normalize_rows(&mut l);
    let cos = truth.vectors.dot(&l.t());
    let best: Vec<(usize, f64)> = (0..truth.n_gt())
        .into_par_iter()
        .map(|j| {
            let row = cos.row(j);
            let mut arg = 0;
            for (k, &c) in row.iter().enumerate() {
                if c > row[arg] {
                    arg = k;
                }
            }
            (arg, row[arg].clamp(-1.0, 1.0))
        })
        .collect();
    let per: Vec<f64> = best.iter().map(|b| b.1).collect();
    Ok(RecoveryReport {
        mmcs: per.iter().sum::<f64>() / per.len() as f64,
        per_feature_max_cos: per,
        matched_index: best.iter().map(|b| b.0).collect(),
    })
}

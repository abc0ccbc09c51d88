//! Feature-level activation patching against a model oracle, greedy
//! feature-subset ordering, and ablation-based causal trees.

mod tree;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::par::*;
use crate::sae::Dictionary;
use crate::store::read_dataset;
use crate::{Error, Result};

pub use tree::{ablation_effects, build_causal_tree, CausalTreeNode, Identity, LayerTransition, Linear};

/// Maps the activations at the intervened layer (one row per position) to
/// output logits. Must be deterministic.
pub trait ModelOracle: Sync {
    fn d_in(&self) -> usize;
    fn forward(&self, activations: ArrayView2<'_, f32>) -> Result<Array1<f64>>;
}

/// Mean-pools positions and applies a linear unembedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyOracle {
    unembed: Array2<f32>,
}

impl ToyOracle {
    pub fn new(unembed: Array2<f32>) -> Result<Self> {
        if unembed.nrows() < 2 || unembed.ncols() == 0 {
            return Err(Error::arg("unembedding needs at least two logits and one input dimension"));
        }
        Ok(ToyOracle { unembed })
    }

    pub fn unembed(&self) -> ArrayView2<'_, f32> {
        self.unembed.view()
    }
}

impl ModelOracle for ToyOracle {
    fn d_in(&self) -> usize {
        self.unembed.ncols()
    }

    fn forward(&self, activations: ArrayView2<'_, f32>) -> Result<Array1<f64>> {
        if activations.ncols() != self.d_in() || activations.nrows() == 0 {
            return Err(Error::dim(format!(
                "oracle expects a nonempty k × {} input, got {:?}",
                self.d_in(),
                activations.dim()
            )));
        }
        let k = activations.nrows() as f64;
        let mut pooled = Array1::<f64>::zeros(self.d_in());
        for row in activations.rows() {
            pooled.zip_mut_with(&row, |p, &x| *p += f64::from(x));
        }
        pooled /= k;
        Ok(Array1::from_iter(self.unembed.rows().into_iter().map(|u| {
            u.iter().zip(&pooled).map(|(&a, &b)| f64::from(a) * b).sum::<f64>()
        })))
    }
}

/// A base/target activation pair with their codes and the target logits.
#[derive(Debug, Clone)]
pub struct PatchCase {
    base: Array2<f32>,
    target: Array2<f32>,
    base_codes: Array2<f32>,
    target_codes: Array2<f32>,
    target_logits: Array1<f64>,
}

impl PatchCase {
    pub fn new(dict: &Dictionary, base: Array2<f32>, target: Array2<f32>, oracle: &dyn ModelOracle) -> Result<Self> {
        if base.dim() != target.dim() {
            return Err(Error::dim(format!(
                "base is {:?} but target is {:?}",
                base.dim(),
                target.dim()
            )));
        }
        if base.ncols() != dict.d_in() || oracle.d_in() != dict.d_in() {
            return Err(Error::dim(format!(
                "activations have {} columns, dictionary d_in {}, oracle d_in {}",
                base.ncols(),
                dict.d_in(),
                oracle.d_in()
            )));
        }
        let target_logits = oracle.forward(target.view())?;
        Ok(PatchCase {
            base_codes: dict.encode_batch(base.view())?,
            target_codes: dict.encode_batch(target.view())?,
            base,
            target,
            target_logits,
        })
    }

    pub fn positions(&self) -> usize {
        self.base.nrows()
    }

    pub fn base(&self) -> ArrayView2<'_, f32> {
        self.base.view()
    }

    pub fn target(&self) -> ArrayView2<'_, f32> {
        self.target.view()
    }

    pub fn base_codes(&self) -> ArrayView2<'_, f32> {
        self.base_codes.view()
    }

    pub fn target_codes(&self) -> ArrayView2<'_, f32> {
        self.target_codes.view()
    }

    pub fn target_logits(&self) -> ArrayView1<'_, f64> {
        self.target_logits.view()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchResult {
    pub features: Vec<usize>,
    pub kl: f64,
    pub edit_magnitude: f64,
    pub logits: Vec<f64>,
}

fn check_features(features: &[usize], dict: &Dictionary) -> Result<()> {
    match features.iter().find(|&&f| f >= dict.d_hid()) {
        Some(f) => Err(Error::arg(format!("feature {f} out of range for d_hid {}", dict.d_hid()))),
        None => Ok(()),
    }
}

/// Per-position patch deltas `Σ_{j∈F} (c̄_ij − c_ij) f_j`, in f64.
fn patch_deltas(case: &PatchCase, dict: &Dictionary, features: &[usize]) -> Array2<f64> {
    let mut delta = Array2::<f64>::zeros(case.base.dim());
    for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
        for &j in features {
            let w = f64::from(case.target_codes[[i, j]]) - f64::from(case.base_codes[[i, j]]);
            if w != 0.0 {
                row.zip_mut_with(&dict.feature(j), |d, &f| *d += w * f64::from(f));
            }
        }
    }
    delta
}

/// `x′_i = x_i + Σ_{j∈F} (c̄_ij − c_ij) f_j` at every position. An empty set
/// returns the base activations unchanged.
pub fn patch_activations(case: &PatchCase, dict: &Dictionary, features: &[usize]) -> Result<Array2<f32>> {
    check_features(features, dict)?;
    if case.base.ncols() != dict.d_in() {
        return Err(Error::dim("case does not match dictionary"));
    }
    if features.is_empty() {
        return Ok(case.base.clone());
    }
    let delta = patch_deltas(case, dict, features);
    Ok(Array2::from_shape_fn(case.base.dim(), |(i, k)| {
        (f64::from(case.base[[i, k]]) + delta[[i, k]]) as f32
    }))
}

/// `D_KL(softmax(z) ‖ softmax(y))`, computed with log-sum-exp in f64.
pub fn kl_divergence(z: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if z.len() != y.len() {
        return Err(Error::dim(format!("logit lengths differ: {} vs {}", z.len(), y.len())));
    }
    if z.len() < 2 {
        return Err(Error::arg("KL divergence needs at least two logits"));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("logits must be finite".into()));
    }
    let log_z = log_softmax(z);
    let log_y = log_softmax(y);
    let kl: f64 = log_z
        .iter()
        .zip(&log_y)
        .map(|(&lz, &ly)| lz.exp() * (lz - ly))
        .sum();
    Ok(kl.max(0.0))
}

fn log_softmax(v: ArrayView1<'_, f64>) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|&x| x - lse).collect()
}

/// Patches `features`, runs the oracle and compares against the target
/// logits.
pub fn evaluate_patch(
    case: &PatchCase,
    dict: &Dictionary,
    features: &[usize],
    oracle: &dyn ModelOracle,
) -> Result<PatchResult> {
    check_features(features, dict)?;
    let patched = patch_activations(case, dict, features)?;
    let edit_magnitude = if features.is_empty() {
        0.0
    } else {
        let delta = patch_deltas(case, dict, features);
        delta.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / case.positions() as f64
    };
    let logits = oracle.forward(patched.view())?;
    let kl = kl_divergence(logits.view(), case.target_logits.view())?;
    Ok(PatchResult {
        features: features.to_vec(),
        kl,
        edit_magnitude,
        logits: logits.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    #[default]
    Independent,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub n_features: usize,
    pub mean_kl: f64,
    pub mean_edit_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureOrdering {
    pub mode: OrderingMode,
    pub features: Vec<usize>,
    /// Mean KL and edit magnitude after patching the first `n_features`
    /// features, for `n_features = 0..=features.len()`.
    pub trajectory: Vec<TrajectoryPoint>,
}

impl FeatureOrdering {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::sae::csv_err(path, e))?;
        w.write_record(["n_features", "mean_kl", "mean_edit_magnitude"])
            .map_err(|e| crate::sae::csv_err(path, e))?;
        for p in &self.trajectory {
            w.write_record([
                p.n_features.to_string(),
                p.mean_kl.to_string(),
                p.mean_edit_magnitude.to_string(),
            ])
            .map_err(|e| crate::sae::csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mean KL and edit magnitude of patching `features` across all cases.
pub fn mean_patch(
    cases: &[PatchCase],
    dict: &Dictionary,
    features: &[usize],
    oracle: &dyn ModelOracle,
) -> Result<(f64, f64)> {
    if cases.is_empty() {
        return Err(Error::arg("at least one patch case is required"));
    }
    let results: Vec<Result<PatchResult>> = cases
        .par_iter()
        .map(|c| evaluate_patch(c, dict, features, oracle))
        .collect();
    let (mut kl, mut edit) = (0.0, 0.0);
    for r in results {
        let r = r?;
        kl += r.kl;
        edit += r.edit_magnitude;
    }
    let n = cases.len() as f64;
    Ok((kl / n, edit / n))
}

/// Orders candidate features by how much patching them closes the gap to
/// the target logits.
///
/// `Independent` scores every candidate alone once and sorts by KL
/// reduction. `Greedy` grows the set one feature at a time, each step adding
/// the candidate that minimises the mean KL of the accumulated set. Ties go
/// to the lower feature index in both modes.
pub fn greedy_feature_ordering(
    cases: &[PatchCase],
    dict: &Dictionary,
    oracle: &dyn ModelOracle,
    candidates: &[usize],
    mode: OrderingMode,
    budget: usize,
) -> Result<FeatureOrdering> {
    if candidates.is_empty() {
        return Err(Error::arg("candidate set is empty"));
    }
    if budget == 0 || budget > candidates.len() {
        return Err(Error::arg(format!(
            "budget must lie in 1..={}, got {budget}",
            candidates.len()
        )));
    }
    check_features(candidates, dict)?;
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands.len() != candidates.len() {
        return Err(Error::arg("candidate set contains duplicates"));
    }

    let score = |set: &[usize]| mean_patch(cases, dict, set, oracle);
    let (kl0, edit0) = score(&[])?;
    let mut trajectory = vec![TrajectoryPoint {
        n_features: 0,
        mean_kl: kl0,
        mean_edit_magnitude: edit0,
    }];
    let mut chosen: Vec<usize> = Vec::with_capacity(budget);

    match mode {
        OrderingMode::Independent => {
            let singles = cands
                .iter()
                .map(|&f| score(&[f]).map(|(kl, _)| (f, kl)))
                .collect::<Result<Vec<_>>>()?;
            let mut ranked = singles;
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            for &(f, _) in ranked.iter().take(budget) {
                chosen.push(f);
                let (kl, edit) = score(&chosen)?;
                trajectory.push(TrajectoryPoint {
                    n_features: chosen.len(),
                    mean_kl: kl,
                    mean_edit_magnitude: edit,
                });
            }
        }
        OrderingMode::Greedy => {
            let mut remaining = cands;
            while chosen.len() < budget {
                let mut best: Option<(usize, f64, f64)> = None;
                for (pos, &f) in remaining.iter().enumerate() {
                    let mut set = chosen.clone();
                    set.push(f);
                    let (kl, edit) = score(&set)?;
                    if best.is_none_or(|(_, b, _)| kl < b) {
                        best = Some((pos, kl, edit));
                    }
                }
                let (pos, kl, edit) = best.expect("remaining is nonempty");
                chosen.push(remaining.remove(pos));
                trajectory.push(TrajectoryPoint {
                    n_features: chosen.len(),
                    mean_kl: kl,
                    mean_edit_magnitude: edit,
                });
            }
        }
    }
    Ok(FeatureOrdering {
        mode,
        features: chosen,
        trajectory,
    })
}

/// `x − c_f f` with `c_f` the feature's own activation on `x`.
pub fn ablate_feature(x: ArrayView1<'_, f32>, dict: &Dictionary, feature: usize) -> Result<Array1<f32>> {
    check_features(&[feature], dict)?;
    let c = f64::from(dict.activation(feature, x)?);
    if c == 0.0 {
        return Ok(x.to_owned());
    }
    let f = dict.feature(feature);
    Ok(Array1::from_iter(
        x.iter().zip(f).map(|(&xi, &fi)| (f64::from(xi) - c * f64::from(fi)) as f32),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub base: PathBuf,
    pub target: PathBuf,
}

/// `{"cases": [{"base": "a.sact", "target": "b.sact"}, ...]}`; relative
/// paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub cases: Vec<CaseEntry>,
}

impl CaseManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: CaseManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for c in &mut m.cases {
            c.base = dir.join(&c.base);
            c.target = dir.join(&c.target);
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_cases(&self, dict: &Dictionary, oracle: &dyn ModelOracle) -> Result<Vec<PatchCase>> {
        self.cases
            .iter()
            .map(|c| {
                let base = read_dataset(&c.base)?.into_inner();
                let target = read_dataset(&c.target)?.into_inner();
                PatchCase::new(dict, base, target, oracle)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_dict(d: usize) -> Dictionary {
        Dictionary::tied(Array2::eye(d)).unwrap()
    }

    #[test]
    fn kl_hand_value() {
        let z = array![2f64.ln(), 0.0];
        let y = array![0.0, 0.0];
        let want = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(z.view(), y.view()).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn kl_shift_invariant_and_errors() {
        let y = array![0.3, -1.0, 2.0];
        let z = &y + 7.5;
        assert!(kl_divergence(z.view(), y.view()).unwrap() < 1e-12);
        assert!(kl_divergence(array![1.0].view(), array![1.0].view()).is_err());
        assert!(kl_divergence(array![1.0, 2.0].view(), array![1.0, 2.0, 3.0].view()).is_err());
    }

    #[test]
    fn empty_patch_is_identity_and_full_patch_reaches_target() {
        let dict = identity_dict(3);
        let oracle = ToyOracle::new(Array2::eye(3)).unwrap();
        let base = array![[1.0f32, 0.5, 0.0], [0.25, 0.0, 2.0]];
        let target = array![[0.0f32, 1.0, 3.0], [1.5, 0.5, 0.0]];
        let case = PatchCase::new(&dict, base.clone(), target.clone(), &oracle).unwrap();
        assert_eq!(patch_activations(&case, &dict, &[]).unwrap(), base);
        let all = patch_activations(&case, &dict, &[0, 1, 2]).unwrap();
        for (a, b) in all.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
        let r = evaluate_patch(&case, &dict, &[0, 1, 2], &oracle).unwrap();
        assert!(r.kl < 1e-9);
        assert!(patch_activations(&case, &dict, &[3]).is_err());
    }

    #[test]
    fn ablation_removes_the_feature() {
        let dict = identity_dict(2);
        let x = array![2.0f32, -1.0];
        let a = ablate_feature(x.view(), &dict, 0).unwrap();
        assert_eq!(a, array![0.0, -1.0]);
        // inactive feature leaves x alone
        assert_eq!(ablate_feature(x.view(), &dict, 1).unwrap(), x);
    }
}

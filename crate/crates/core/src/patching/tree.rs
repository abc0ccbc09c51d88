use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::ablate_feature;
use crate::par::*;
use crate::sae::Dictionary;
use crate::store::ActivationDataset;
use crate::{Error, Result};

/// Contexts sampled per node.
pub const TREE_CONTEXTS: usize = 20;

/// Carries an activation vector from layer `from` to layer `from + 1`.
pub trait LayerTransition: Sync {
    fn propagate(&self, from: usize, x: ArrayView1<'_, f32>) -> Result<Array1<f32>>;
}

/// Passes activations through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl LayerTransition for Identity {
    fn propagate(&self, _from: usize, x: ArrayView1<'_, f32>) -> Result<Array1<f32>> {
        Ok(x.to_owned())
    }
}

/// `x ↦ A_from x`, one matrix per transition.
#[derive(Debug, Clone)]
pub struct Linear {
    pub maps: Vec<Array2<f32>>,
}

impl LayerTransition for Linear {
    fn propagate(&self, from: usize, x: ArrayView1<'_, f32>) -> Result<Array1<f32>> {
        let a = self
            .maps
            .get(from)
            .ok_or_else(|| Error::arg(format!("no transition out of layer {from}")))?;
        if a.ncols() != x.len() {
            return Err(Error::dim(format!("transition expects {} inputs, got {}", a.ncols(), x.len())));
        }
        Ok(Array1::from_iter(a.rows().into_iter().map(|r| {
            r.iter().zip(x).map(|(&p, &q)| f64::from(p) * f64::from(q)).sum::<f64>() as f32
        })))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTreeNode {
    pub layer: usize,
    pub feature: usize,
    /// Mean decrease of the parent's activation when this feature is
    /// ablated; zero at the root.
    pub effect: f64,
    /// Maximum activation of this feature over its layer's data.
    pub max_activation: f64,
    pub children: Vec<CausalTreeNode>,
}

/// Indices of the highest-activation contexts with activation in
/// `[M/2, M]`, at most [`TREE_CONTEXTS`], along with `M`.
fn qualifying_contexts(dict: &Dictionary, data: &ActivationDataset, layer: usize, feature: usize) -> Result<(Vec<usize>, f64)> {
    let acts: Vec<Result<f32>> = (0..data.len())
        .into_par_iter()
        .map(|r| dict.activation(feature, data.row(r)))
        .collect();
    let acts = acts.into_iter().collect::<Result<Vec<f32>>>()?;
    let max = acts.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Err(Error::NoQualifyingContexts { layer, feature });
    }
    let half = max / 2.0;
    let mut idx: Vec<usize> = (0..acts.len()).filter(|&r| acts[r] >= half).collect();
    idx.sort_by(|&a, &b| acts[b].total_cmp(&acts[a]).then(a.cmp(&b)));
    idx.truncate(TREE_CONTEXTS);
    Ok((idx, f64::from(max)))
}

/// Mean decrease of `feature` at `layer` when each feature of the previous
/// layer is ablated, over the given contexts. The baseline is the target
/// activation after propagating the unablated previous-layer vector.
pub fn ablation_effects(
    layer: usize,
    feature: usize,
    contexts: &[usize],
    dicts: &[Dictionary],
    data: &[ActivationDataset],
    propagate: &dyn LayerTransition,
) -> Result<Vec<f64>> {
    if layer == 0 || layer >= dicts.len() {
        return Err(Error::arg(format!("layer {layer} has no upstream layer")));
    }
    let (prev_dict, dict) = (&dicts[layer - 1], &dicts[layer]);
    let prev = &data[layer - 1];
    let per_context: Vec<Result<Vec<f64>>> = contexts
        .par_iter()
        .map(|&r| {
            let x = prev.row(r);
            let base = f64::from(dict.activation(feature, propagate.propagate(layer - 1, x)?.view())?);
            let codes = prev_dict.encode(x)?;
            let mut effects = vec![0.0; prev_dict.d_hid()];
            for (g, &c) in codes.iter().enumerate() {
                if c > 0.0 {
                    let ablated = ablate_feature(x, prev_dict, g)?;
                    let y = propagate.propagate(layer - 1, ablated.view())?;
                    effects[g] = base - f64::from(dict.activation(feature, y.view())?);
                }
            }
            Ok(effects)
        })
        .collect();
    let mut total = vec![0.0; prev_dict.d_hid()];
    for e in per_context {
        for (t, v) in total.iter_mut().zip(e?) {
            *t += v;
        }
    }
    let n = contexts.len().max(1) as f64;
    Ok(total.into_iter().map(|t| t / n).collect())
}

/// Expands `(layer, feature)` into a tree of upstream features ranked by
/// ablation effect. Children are the `fanout` previous-layer features with
/// the largest positive effect; expansion stops at layer 0 or after `depth`
/// levels.
pub fn build_causal_tree(
    target: (usize, usize),
    dicts: &[Dictionary],
    data: &[ActivationDataset],
    propagate: &dyn LayerTransition,
    depth: usize,
    fanout: usize,
) -> Result<CausalTreeNode> {
    if dicts.len() != data.len() || dicts.is_empty() {
        return Err(Error::arg("need one dictionary per layer dataset"));
    }
    let n = data[0].len();
    for (l, (d, x)) in dicts.iter().zip(data).enumerate() {
        if x.len() != n {
            return Err(Error::dim(format!("layer {l} has {} rows, layer 0 has {n}", x.len())));
        }
        if x.d_in() != d.d_in() {
            return Err(Error::dim(format!("layer {l} data and dictionary widths differ")));
        }
    }
    let (layer, feature) = target;
    if layer >= dicts.len() || feature >= dicts[layer].d_hid() {
        return Err(Error::arg(format!("target ({layer}, {feature}) is out of range")));
    }
    if depth == 0 || fanout == 0 {
        return Err(Error::arg("depth and fanout must be positive"));
    }
    expand(layer, feature, 0.0, dicts, data, propagate, depth, fanout)
}

#[allow(clippy::too_many_arguments)]
fn expand(
    layer: usize,
    feature: usize,
    effect: f64,
    dicts: &[Dictionary],
    data: &[ActivationDataset],
    propagate: &dyn LayerTransition,
    depth: usize,
    fanout: usize,
) -> Result<CausalTreeNode> {
    let (contexts, max_activation) = qualifying_contexts(&dicts[layer], &data[layer], layer, feature)?;
    let mut node = CausalTreeNode {
        layer,
        feature,
        effect,
        max_activation,
        children: Vec::new(),
    };
    if layer == 0 || depth == 0 {
        return Ok(node);
    }
    let effects = ablation_effects(layer, feature, &contexts, dicts, data, propagate)?;
    let mut ranked: Vec<(usize, f64)> = effects.into_iter().enumerate().filter(|&(_, e)| e > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(fanout);
    for (g, e) in ranked {
        node.children
            .push(expand(layer - 1, g, e, dicts, data, propagate, depth - 1, fanout)?);
    }
    Ok(node)
}

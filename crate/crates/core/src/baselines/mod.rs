//! Direction sets the learned dictionaries are compared against: PCA,
//! FastICA, random directions and the neuron basis, with optional top-K
//! sparsification of their codes.

mod ica;
mod pca;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::eval::Codec;
use crate::linalg::normalize_rows;
use crate::store::{read_sdic, write_sdic, SdicRecord, FLAG_MEAN, FLAG_TIED};
use crate::{Error, Result};

pub use ica::{fit_ica, IcaConfig, IcaFit};
pub use pca::{fit_pca, fit_pca_online, CovarianceAccumulator, PcaFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Pca,
    Ica,
    Random,
    NeuronBasis,
    Learned,
}

impl DirectionKind {
    fn code(self) -> u8 {
        match self {
            DirectionKind::Pca => 0,
            DirectionKind::Ica => 1,
            DirectionKind::Random => 2,
            DirectionKind::NeuronBasis => 3,
            DirectionKind::Learned => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DirectionKind::Pca,
            1 => DirectionKind::Ica,
            2 => DirectionKind::Random,
            3 => DirectionKind::NeuronBasis,
            4 => DirectionKind::Learned,
            _ => return None,
        })
    }
}

/// Keep only the K largest nonnegative coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopK {
    pub k_active: usize,
}

/// `k` unit-norm directions with a centring offset. Codes are
/// `max(0, ⟨d_i, x − mean⟩)`.
///
/// `decoder`, when present, holds the rows used to map codes back to
/// activations (ICA's non-orthogonal directions need their dual basis);
/// otherwise the directions themselves are used.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    directions: Array2<f32>,
    kind: DirectionKind,
    mean: Array1<f32>,
    decoder: Option<Array2<f32>>,
}

impl DirectionSet {
    pub fn new(mut directions: Array2<f64>, kind: DirectionKind, mean: Array1<f64>) -> Result<Self> {
        if directions.nrows() == 0 {
            return Err(Error::arg("direction set needs at least one direction"));
        }
        if mean.len() != directions.ncols() {
            return Err(Error::dim("mean length disagrees with direction dimension"));
        }
        if directions.rows().into_iter().any(|r| crate::linalg::norm(r) == 0.0) {
            return Err(Error::Validation("zero direction".into()));
        }
        normalize_rows(&mut directions);
        Ok(DirectionSet {
            directions: directions.mapv(|v| v as f32),
            kind,
            mean: mean.mapv(|v| v as f32),
            decoder: None,
        })
    }

    pub(crate) fn with_decoder(mut self, decoder: Array2<f64>) -> Self {
        self.decoder = Some(decoder.mapv(|v| v as f32));
        self
    }

    pub fn k(&self) -> usize {
        self.directions.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.directions.ncols()
    }

    pub fn kind(&self) -> DirectionKind {
        self.kind
    }

    pub fn directions(&self) -> ArrayView2<'_, f32> {
        self.directions.view()
    }

    pub fn mean(&self) -> ArrayView1<'_, f32> {
        self.mean.view()
    }

    pub fn decoder(&self) -> ArrayView2<'_, f32> {
        self.decoder.as_ref().unwrap_or(&self.directions).view()
    }

    /// Raw projections `⟨d_i, x − mean⟩`, before clamping.
    pub fn raw_coefficients(&self, x: ArrayView1<'_, f32>) -> Result<Array1<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::dim(format!("input has length {}, directions have {}", x.len(), self.d_in())));
        }
        let centred: Array1<f64> = x.iter().zip(&self.mean).map(|(&a, &m)| f64::from(a) - f64::from(m)).collect();
        Ok(self.directions.rows().into_iter().map(|d| d.iter().zip(&centred).map(|(&a, b)| f64::from(a) * b).sum()).collect())
    }

    /// Codes for `x` as a [`Dictionary`](crate::Dictionary) would produce
    /// them: negatives clamped to zero, then optionally top-K.
    pub fn project_codes(&self, x: ArrayView1<'_, f32>, topk: Option<TopK>) -> Result<Array1<f32>> {
        let k_active = check_topk(topk, self.k())?;
        let mut c = self.raw_coefficients(x)?.mapv(|v| v.max(0.0) as f32);
        if let Some(k) = k_active {
            keep_top_k(c.as_slice_mut().expect("contiguous"), k);
        }
        Ok(c)
    }

    /// `mean + Σ c_i decoder_i`.
    pub fn reconstruct(&self, codes: ArrayView1<'_, f32>) -> Result<Array1<f32>> {
        if codes.len() != self.k() {
            return Err(Error::dim(format!("codes have length {}, set has {} directions", codes.len(), self.k())));
        }
        Ok(codes.dot(&self.decoder()) + &self.mean)
    }

    pub fn to_record(&self) -> SdicRecord {
        let tied = self.decoder.is_none();
        SdicRecord {
            d_hid: self.k(),
            d_in: self.d_in(),
            flags: SdicRecord::direction_flags(self.kind.code()) | FLAG_MEAN | if tied { FLAG_TIED } else { 0 },
            m: self.directions.iter().copied().collect(),
            b: vec![0.0; self.k()],
            m_d: self.decoder.as_ref().map(|d| d.iter().copied().collect()),
            mean: Some(self.mean.to_vec()),
        }
    }

    pub fn from_record(rec: SdicRecord) -> Result<Self> {
        if !rec.is_direction_set() {
            return Err(Error::arg("file holds a learned dictionary, not a direction set"));
        }
        let kind = DirectionKind::from_code(rec.kind_code())
            .ok_or_else(|| Error::arg(format!("unknown direction kind code {}", rec.kind_code())))?;
        let shape = (rec.d_hid, rec.d_in);
        let directions = Array2::from_shape_vec(shape, rec.m).map_err(|e| Error::dim(e.to_string()))?;
        let decoder = rec
            .m_d
            .map(|v| Array2::from_shape_vec(shape, v).map_err(|e| Error::dim(e.to_string())))
            .transpose()?;
        let mean = Array1::from(rec.mean.unwrap_or_else(|| vec![0.0; rec.d_in]));
        Ok(DirectionSet {
            directions,
            kind,
            mean,
            decoder,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_sdic(path, &self.to_record())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(read_sdic(path)?)
    }
}

fn check_topk(topk: Option<TopK>, k: usize) -> Result<Option<usize>> {
    match topk {
        Some(TopK { k_active }) if k_active == 0 || k_active > k => Err(Error::arg(format!(
            "top-K of {k_active} is outside 1..={k} directions"
        ))),
        Some(t) => Ok(Some(t.k_active)),
        None => Ok(None),
    }
}

/// Zeroes all but the `k` largest positive entries (lower index wins ties).
pub fn keep_top_k(c: &mut [f32], k: usize) {
    let mut active: Vec<usize> = (0..c.len()).filter(|&i| c[i] > 0.0).collect();
    if active.len() <= k {
        return;
    }
    let order = |&a: &usize, &b: &usize| c[b].total_cmp(&c[a]).then(a.cmp(&b));
    active.select_nth_unstable_by(k - 1, order);
    for &i in &active[k..] {
        c[i] = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKind {
    Random,
    NeuronBasis,
}

/// Seeded Gaussian unit directions, or the identity basis (which needs
/// `k == d_in`). Neither is centred.
pub fn make_fixed_directions(kind: FixedKind, d_in: usize, k: usize, seed: u64) -> Result<DirectionSet> {
    if d_in == 0 || k == 0 {
        return Err(Error::arg("d_in and k must be positive"));
    }
    let zero = Array1::zeros(d_in);
    match kind {
        FixedKind::NeuronBasis => {
            if k != d_in {
                return Err(Error::arg(format!("neuron basis needs k == d_in ({d_in}), got {k}")));
            }
            DirectionSet::new(Array2::eye(d_in), DirectionKind::NeuronBasis, zero)
        }
        FixedKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_simple_fn((k, d_in), || rng.sample::<f64, _>(StandardNormal));
            DirectionSet::new(m, DirectionKind::Random, zero)
        }
    }
}

/// A direction set used as a [`Codec`].
///
/// `clamp = true` gives the nonnegative (optionally top-K) codes used for
/// feature comparisons; `clamp = false` gives plain linear projection, whose
/// reconstruction is the orthogonal projection for orthonormal sets.
#[derive(Debug, Clone, Copy)]
pub struct DirectionCodec<'a> {
    pub set: &'a DirectionSet,
    pub topk: Option<TopK>,
    pub clamp: bool,
}

impl<'a> DirectionCodec<'a> {
    pub fn new(set: &'a DirectionSet, topk: Option<TopK>, clamp: bool) -> Result<Self> {
        check_topk(topk, set.k())?;
        Ok(DirectionCodec { set, topk, clamp })
    }
}

impl Codec for DirectionCodec<'_> {
    fn d_in(&self) -> usize {
        self.set.d_in()
    }

    fn n_features(&self) -> usize {
        self.set.k()
    }

    fn encode_rows(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let c = (&x - &self.set.mean).dot(&self.set.directions.t());
        // gemm may hand back a column-major result for degenerate shapes
        let mut c = c.as_standard_layout().into_owned();
        for mut row in c.rows_mut() {
            let row = row.as_slice_mut().expect("standard layout");
            if self.clamp {
                row.iter_mut().for_each(|v| *v = v.max(0.0));
                if let Some(t) = self.topk {
                    keep_top_k(row, t.k_active);
                }
            } else if let Some(t) = self.topk {
                let mut mags: Vec<f32> = row.iter().map(|v| v.abs()).collect();
                keep_top_k(&mut mags, t.k_active);
                for (v, m) in row.iter_mut().zip(mags) {
                    if m == 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        c
    }

    fn reconstruct_rows(&self, codes: ArrayView2<'_, f32>) -> Array2<f32> {
        codes.dot(&self.set.decoder()) + &self.set.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn neuron_basis_clamps_negatives() {
        let set = make_fixed_directions(FixedKind::NeuronBasis, 2, 2, 0).unwrap();
        assert_eq!(set.project_codes(array![2.0f32, -3.0].view(), None).unwrap(), array![2.0f32, 0.0]);
        assert_eq!(set.directions(), Array2::<f32>::eye(2));
        assert!(make_fixed_directions(FixedKind::NeuronBasis, 3, 2, 0).is_err());
    }

    #[test]
    fn random_directions_are_seeded() {
        let a = make_fixed_directions(FixedKind::Random, 16, 8, 5).unwrap();
        let b = make_fixed_directions(FixedKind::Random, 16, 8, 5).unwrap();
        let c = make_fixed_directions(FixedKind::Random, 16, 8, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_512_directions_are_nearly_orthogonal() {
        let s = make_fixed_directions(FixedKind::Random, 512, 512, 1).unwrap();
        let d = s.directions().mapv(f64::from);
        let g = d.dot(&d.t());
        let mut worst: f64 = 0.0;
        for i in 0..512 {
            for j in 0..i {
                worst = worst.max(g[[i, j]].abs());
            }
        }
        assert!(worst < 0.25, "max |cos| = {worst}");
    }

    #[test]
    fn top_k_by_hand() {
        let mut c = [3.0f32, 1.0, 2.0];
        keep_top_k(&mut c, 2);
        assert_eq!(c, [3.0, 0.0, 2.0]);
        let mut tie = [1.0f32, 2.0, 2.0, 2.0];
        keep_top_k(&mut tie, 2);
        assert_eq!(tie, [0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn top_k_larger_than_set_is_rejected() {
        let set = make_fixed_directions(FixedKind::NeuronBasis, 3, 3, 0).unwrap();
        assert!(set.project_codes(array![1.0f32, 2.0, 3.0].view(), Some(TopK { k_active: 4 })).is_err());
        assert!(set.project_codes(array![1.0f32, 2.0, 3.0].view(), Some(TopK { k_active: 0 })).is_err());
    }

    #[test]
    fn orthonormal_complete_set_reconstructs_exactly() {
        let th = 0.3f64;
        let rot = array![[th.cos(), th.sin()], [-th.sin(), th.cos()]];
        let set = DirectionSet::new(rot, DirectionKind::Pca, array![1.0, -1.0]).unwrap();
        let (c3, s3) = (0.3f32.cos(), 0.3f32.sin());
        let x = array![1.0 + c3 - s3, -1.0 + s3 + c3];
        let c = set.project_codes(x.view(), None).unwrap();
        assert!(c.iter().all(|&v| v > 0.5));
        let back = set.reconstruct(c.view()).unwrap();
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-6));
    }
}

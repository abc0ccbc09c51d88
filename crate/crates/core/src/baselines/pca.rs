use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{DirectionKind, DirectionSet};
use crate::linalg::{fix_sign, symmetric_eigen_desc};
use crate::par::*;
use crate::store::ActivationDataset;
use crate::{Error, Result};

/// Exact streaming mean and scatter matrix `Σ (x − x̄)(x − x̄)ᵀ` in f64,
/// merged batch by batch.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    n: u64,
    mean: Array1<f64>,
    scatter: Array2<f64>,
}

impl CovarianceAccumulator {
    pub fn new(d: usize) -> Self {
        CovarianceAccumulator {
            n: 0,
            mean: Array1::zeros(d),
            scatter: Array2::zeros((d, d)),
        }
    }

    fn from_rows(x: ArrayView2<'_, f32>) -> Self {
        let d = x.ncols();
        if x.nrows() == 0 {
            return Self::new(d);
        }
        let xf = x.mapv(f64::from);
        let mean = xf.mean_axis(Axis(0)).expect("nonempty");
        let centred = &xf - &mean;
        CovarianceAccumulator {
            n: x.nrows() as u64,
            mean,
            scatter: centred.t().dot(&centred),
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let outer = delta
            .view()
            .insert_axis(Axis(1))
            .dot(&delta.view().insert_axis(Axis(0)));
        self.scatter = &self.scatter + &other.scatter + &(outer * (na * nb / n));
        self.mean = &self.mean + &(&delta * (nb / n));
        self.n += other.n;
    }

    pub fn push_batch(&mut self, x: ArrayView2<'_, f32>) -> Result<()> {
        if x.ncols() != self.mean.len() {
            return Err(Error::dim(format!("batch has {} columns, expected {}", x.ncols(), self.mean.len())));
        }
        let parts: Vec<CovarianceAccumulator> = crate::par::row_chunks(x.nrows())
            .into_par_iter()
            .map(|r| Self::from_rows(x.slice(s![r, ..])))
            .collect();
        for p in &parts {
            self.merge(p);
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// Sample covariance (divides by n − 1).
    pub fn covariance(&self) -> Array2<f64> {
        &self.scatter / (self.n.saturating_sub(1).max(1)) as f64
    }
}

#[derive(Debug, Clone)]
pub struct PcaFit {
    pub directions: DirectionSet,
    /// Covariance eigenvalues of the returned components, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Single-pass PCA: accumulates the exact covariance over the batches, then
/// takes the top eigenvectors. Each component's largest-magnitude entry is
/// made positive.
pub fn fit_pca_online<I>(batches: I, n_components: usize) -> Result<PcaFit>
where
    I: IntoIterator<Item = Result<Array2<f32>>>,
{
    let mut acc: Option<CovarianceAccumulator> = None;
    for batch in batches {
        let batch = batch?;
        acc.get_or_insert_with(|| CovarianceAccumulator::new(batch.ncols()))
            .push_batch(batch.view())?;
    }
    let acc = acc.ok_or_else(|| Error::arg("PCA needs at least one batch"))?;
    finish(&acc, n_components)
}

pub fn fit_pca(data: &ActivationDataset, n_components: usize) -> Result<PcaFit> {
    let mut acc = CovarianceAccumulator::new(data.d_in());
    for batch in data.batches(65_536) {
        acc.push_batch(batch)?;
    }
    finish(&acc, n_components)
}

fn finish(acc: &CovarianceAccumulator, n_components: usize) -> Result<PcaFit> {
    let d = acc.mean.len();
    if n_components == 0 || n_components > d {
        return Err(Error::arg(format!("n_components must lie in 1..={d}, got {n_components}")));
    }
    if (acc.n as usize) < n_components {
        return Err(Error::arg(format!(
            "{} samples are fewer than the {n_components} requested components",
            acc.n
        )));
    }
    let (values, vectors) = symmetric_eigen_desc(acc.covariance().view());
    let mut top = vectors.slice(s![..n_components, ..]).to_owned();
    for row in top.rows_mut() {
        fix_sign(row);
    }
    let directions = DirectionSet::new(top, DirectionKind::Pca, acc.mean.clone())?;
    Ok(PcaFit {
        directions,
        explained_variance: values.iter().take(n_components).map(|v| v.max(0.0)).collect(),
    })
}

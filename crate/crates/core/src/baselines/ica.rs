use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DirectionKind, DirectionSet};
use crate::linalg::{dual_rows, fix_sign, inv_sqrt_spd, normalize_rows, symmetric_eigen_desc};
use crate::par::*;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcaConfig {
    pub n_components: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_iter() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-4
}

impl IcaConfig {
    pub fn new(n_components: usize) -> Self {
        IcaConfig {
            n_components,
            max_iter: default_max_iter(),
            tol: default_tol(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcaFit {
    /// Unit-normalised unmixing rows in input space.
    pub directions: DirectionSet,
    /// Unit-normalised estimates of the mixing columns, one per row.
    pub mixing: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// FastICA (symmetric, log-cosh contrast) on an in-memory sample.
///
/// Not converging within `max_iter` is reported through `converged`, not as
/// an error.
pub fn fit_ica(data: ArrayView2<'_, f32>, cfg: &IcaConfig) -> Result<IcaFit> {
    let (n, d) = data.dim();
    let k = cfg.n_components;
    if k == 0 || k > d {
        return Err(Error::arg(format!("n_components must lie in 1..={d}, got {k}")));
    }
    if n < 10 * k {
        return Err(Error::arg(format!("ICA needs at least {} samples, got {n}", 10 * k)));
    }
    if cfg.max_iter == 0 || !(cfg.tol.is_finite() && cfg.tol > 0.0) {
        return Err(Error::arg("max_iter and tol must be positive"));
    }

    let mut acc = super::CovarianceAccumulator::new(d);
    acc.push_batch(data)?;
    let mean = acc.mean().clone();
    let (values, vectors) = symmetric_eigen_desc(acc.covariance().view());
    if values[k - 1] <= values[0].abs() * 1e-12 {
        return Err(Error::Validation("sample covariance is rank deficient".into()));
    }
    // K: k × d whitening map
    let mut whiten = vectors.slice(s![..k, ..]).to_owned();
    for (mut row, &v) in whiten.rows_mut().into_iter().zip(values.iter()) {
        row /= v.sqrt();
    }
    let z = whitened(data, &mean, &whiten);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Array2::from_shape_simple_fn((k, k), || rng.sample::<f64, _>(StandardNormal));
    let mut w = decorrelate(init)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let next = decorrelate(fixed_point_step(&w, z.view()))?;
        let lim = next
            .rows()
            .into_iter()
            .zip(w.rows())
            .map(|(a, b)| (a.dot(&b).abs() - 1.0).abs())
            .fold(0.0f64, f64::max);
        w = next;
        if lim < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA did not converge within {} iterations", cfg.max_iter);
    }

    let mut unmixing = w.dot(&whiten);
    normalize_rows(&mut unmixing);
    for row in unmixing.rows_mut() {
        fix_sign(row);
    }
    let dual = dual_rows(unmixing.view())?;
    let mut mixing = dual.clone();
    normalize_rows(&mut mixing);
    let directions = DirectionSet::new(unmixing, DirectionKind::Ica, mean)?.with_decoder(dual);
    Ok(IcaFit {
        directions,
        mixing,
        converged,
        iterations,
    })
}

/// Whitened samples as a k × n matrix.
fn whitened(data: ArrayView2<'_, f32>, mean: &Array1<f64>, whiten: &Array2<f64>) -> Array2<f64> {
    let parts: Vec<Array2<f64>> = crate::par::row_chunks(data.nrows())
        .into_par_iter()
        .map(|r| {
            let xc = &data.slice(s![r, ..]).mapv(f64::from) - mean;
            whiten.dot(&xc.t())
        })
        .collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("chunks share row count")
}

/// `w⁺ = E[z g(wᵀz)] − E[g'(wᵀz)] w` with `g = tanh`.
fn fixed_point_step(w: &Array2<f64>, z: ArrayView2<'_, f64>) -> Array2<f64> {
    let k = w.nrows();
    let n = z.ncols();
    let parts: Vec<(Array2<f64>, Array1<f64>)> = crate::par::row_chunks(n)
        .into_par_iter()
        .map(|r| {
            let zc = z.slice(s![.., r]);
            let g = w.dot(&zc).mapv(f64::tanh);
            let gp = g.mapv(|t| 1.0 - t * t).sum_axis(Axis(1));
            (g.dot(&zc.t()), gp)
        })
        .collect();
    let mut ezg = Array2::<f64>::zeros((k, k));
    let mut egp = Array1::<f64>::zeros(k);
    for (a, b) in &parts {
        ezg += a;
        egp += b;
    }
    let inv_n = 1.0 / n as f64;
    let mut next = ezg * inv_n;
    for (mut row, (wrow, &gp)) in next.rows_mut().into_iter().zip(w.rows().into_iter().zip(egp.iter())) {
        row.scaled_add(-gp * inv_n, &wrow);
    }
    next
}

/// `(W Wᵀ)^{-1/2} W`.
fn decorrelate(w: Array2<f64>) -> Result<Array2<f64>> {
    Ok(inv_sqrt_spd(w.dot(&w.t()).view())?.dot(&w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_uniform(n: usize, seed: u64) -> (Array2<f32>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_simple_fn((2, 2), || rng.random_range(-1.0..1.0f64));
        let x = Array2::from_shape_fn((n, 2), |_| 0.0f32);
        let mut x = x;
        for mut row in x.rows_mut() {
            let s = [rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64)];
            for j in 0..2 {
                row[j] = (a[[j, 0]] * s[0] + a[[j, 1]] * s[1]) as f32;
            }
        }
        (x, a)
    }

    #[test]
    fn recovers_uniform_sources() {
        let (x, a) = mixed_uniform(20_000, 11);
        let fit = fit_ica(x.view(), &IcaConfig::new(2)).unwrap();
        assert!(fit.converged);
        for col in a.columns() {
            let col = &col / col.dot(&col).sqrt();
            let best = fit
                .mixing
                .rows()
                .into_iter()
                .map(|m| m.dot(&col).abs())
                .fold(0.0, f64::max);
            assert!(best > 0.95, "{best}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, _) = mixed_uniform(5_000, 2);
        let a = fit_ica(x.view(), &IcaConfig::new(2)).unwrap();
        let b = fit_ica(x.view(), &IcaConfig::new(2)).unwrap();
        assert_eq!(a.directions, b.directions);
    }

    #[test]
    fn preconditions() {
        let (x, _) = mixed_uniform(100, 0);
        assert!(fit_ica(x.view(), &IcaConfig::new(3)).is_err());
        assert!(fit_ica(x.slice(s![..15, ..]), &IcaConfig::new(2)).is_err());
    }
}

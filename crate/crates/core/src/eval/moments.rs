use ndarray::s;
use serde::{Deserialize, Serialize};

use super::Codec;
use crate::par::*;
use crate::sae::Dictionary;
use crate::store::ActivationDataset;
use crate::{Error, Result};

/// Single-pass central-moment accumulator (Terriberry's update, Pébay's
/// pairwise merge), all in f64.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2 - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let d = other.mean - self.mean;
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d2 * d2;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3 + other.m3 + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n;
        self.mean += d * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.n += other.n;
    }

    pub fn finish(&self) -> MomentStats {
        let n = self.n as f64;
        let variance = (self.n >= 2).then(|| self.m2 / n);
        let spread = variance.filter(|&v| v > 0.0);
        MomentStats {
            count: self.n,
            mean: (self.n >= 1).then_some(self.mean),
            variance,
            skew: spread.filter(|_| self.n >= 3).map(|v| (self.m3 / n) / v.powf(1.5)),
            kurtosis: spread.filter(|_| self.n >= 4).map(|v| (self.m4 / n) / (v * v)),
        }
    }
}

/// Mean, population variance, skew `m₃/m₂^{3/2}` and raw kurtosis `m₄/m₂²`
/// (Gaussian = 3). `None` marks a moment that is undefined for the sample:
/// too few points, or zero variance for skew and kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentStats {
    pub count: u64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub skew: Option<f64>,
    pub kurtosis: Option<f64>,
}

pub fn activation_moments<I: IntoIterator<Item = f64>>(values: I) -> MomentStats {
    let mut acc = MomentAccumulator::default();
    values.into_iter().for_each(|v| acc.push(v));
    acc.finish()
}

/// Moments of every feature's activation (zeros included) over `data`.
pub fn feature_moments(dict: &Dictionary, data: &ActivationDataset) -> Result<Vec<MomentStats>> {
    if data.d_in() != dict.d_in() {
        return Err(Error::dim(format!("data has d_in {}, dictionary expects {}", data.d_in(), dict.d_in())));
    }
    let x = data.view();
    let parts: Vec<Vec<MomentAccumulator>> = crate::par::row_chunks(data.len())
        .into_par_iter()
        .map(|r| {
            let codes = dict.encode_rows(x.slice(s![r, ..]));
            let mut accs = vec![MomentAccumulator::default(); dict.d_hid()];
            for row in codes.rows() {
                for (acc, &c) in accs.iter_mut().zip(row) {
                    acc.push(f64::from(c));
                }
            }
            accs
        })
        .collect();
    let mut total = vec![MomentAccumulator::default(); dict.d_hid()];
    for part in &parts {
        for (a, b) in total.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    Ok(total.iter().map(MomentAccumulator::finish).collect())
}

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two points.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of each moment with per-feature scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCorrelations {
    pub n_features: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub skew: Option<f64>,
    pub kurtosis: Option<f64>,
}

/// Correlates each moment with `scores`, skipping features whose moment or
/// score is undefined. A moment left with fewer than three pairs, or with no
/// spread, reports `None`.
pub fn moment_score_correlation(moments: &[MomentStats], scores: &[Option<f64>]) -> Result<MomentCorrelations> {
    if moments.len() != scores.len() {
        return Err(Error::dim(format!("{} moment rows but {} scores", moments.len(), scores.len())));
    }
    let scored: Vec<f64> = scores.iter().flatten().copied().collect();
    if scored.len() < 3 {
        return Err(Error::arg(format!("need at least 3 scored features, got {}", scored.len())));
    }
    if scored.iter().all(|&s| s == scored[0]) {
        return Err(Error::arg("scores are constant; correlation is undefined"));
    }
    let corr = |pick: fn(&MomentStats) -> Option<f64>| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = moments
            .iter()
            .zip(scores)
            .filter_map(|(m, s)| Some((pick(m)?, (*s)?)))
            .unzip();
        if xs.len() < 3 {
            return None;
        }
        pearson(&xs, &ys)
    };
    Ok(MomentCorrelations {
        n_features: scored.len(),
        mean: corr(|m| m.mean),
        variance: corr(|m| m.variance),
        skew: corr(|m| m.skew),
        kurtosis: corr(|m| m.kurtosis),
    })
}

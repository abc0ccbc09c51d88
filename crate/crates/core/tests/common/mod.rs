//! Independent reference implementations used as test oracles, plus shared
//! fixture builders. The oracles never call into the library's numerics.

#![allow(dead_code)]

pub mod fixtures;

use std::path::PathBuf;

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order and the matching eigenvectors as rows.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mkp, mkq) = (row[p], row[q]);
                    row[p] = c * mkp - s * mkq;
                    row[q] = s * mkp + c * mkq;
                }
                #[allow(clippy::needless_range_loop)]
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Two-pass sample covariance (n − 1 denominator).
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest principal angle (radians) between the row spaces of two sets of
/// orthonormal rows of equal count.
pub fn max_principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let k = a.len();
    // singular values of AᵀB are sqrt of eigenvalues of (A Bᵀ)(A Bᵀ)ᵀ
    let c: Vec<Vec<f64>> = a.iter().map(|ra| b.iter().map(|rb| dot(ra, rb)).collect()).collect();
    let cct: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&c[i], &c[j])).collect()).collect();
    let (vals, _) = jacobi_eigen(&cct);
    let smallest = vals.last().copied().unwrap_or(1.0).clamp(0.0, 1.0).sqrt();
    smallest.min(1.0).acos()
}

/// Classical Gram–Schmidt orthonormalisation of rows.
pub fn gram_schmidt(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let mut v = r.clone();
        for q in &out {
            let p = dot(q, &v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= p * qi;
            }
        }
        let n = dot(&v, &v).sqrt();
        out.push(v.into_iter().map(|x| x / n).collect());
    }
    out
}

/// FVU of projecting centred rows onto the span of orthonormal `basis`.
pub fn projection_fvu(rows: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let (mut err, mut total) = (0.0, 0.0);
    for r in rows {
        let xc: Vec<f64> = r.iter().zip(&mean).map(|(a, m)| a - m).collect();
        let mut proj = vec![0.0; d];
        for q in basis {
            let p = dot(q, &xc);
            for (pj, qj) in proj.iter_mut().zip(q) {
                *pj += p * qj;
            }
        }
        err += xc.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        total += dot(&xc, &xc);
    }
    err / total
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation (no ties expected).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    pearson(&ranks(a), &ranks(b))
}

/// Softmax KL by the textbook formula, no stabilisation.
pub fn naive_kl(z: &[f64], y: &[f64]) -> f64 {
    let pz: Vec<f64> = {
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        z.iter().map(|v| v.exp() / s).collect()
    };
    let py: Vec<f64> = {
        let s: f64 = y.iter().map(|v| v.exp()).sum();
        y.iter().map(|v| v.exp() / s).collect()
    };
    pz.iter().zip(&py).map(|(p, q)| p * (p / q).ln()).sum()
}

/// All permutations of `items` in lexicographic index order.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

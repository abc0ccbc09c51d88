//! Small dense helpers shared by the decomposition code. Eigen- and
//! inverse-problems go through nalgebra; everything else stays in ndarray.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1};

use crate::{Error, Result};

pub fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// L2 norm of an f32 vector, accumulated in f64.
pub fn norm_f32(v: ArrayView1<'_, f32>) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Scales each row to unit L2 norm. Zero rows are left untouched.
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let n = norm(row.view());
        if n > 0.0 {
            row /= n;
        }
    }
}

pub fn normalize_rows_f32(m: &mut Array2<f32>) {
    for mut row in m.rows_mut() {
        let n = norm_f32(row.view());
        if n > 0.0 {
            row.mapv_inplace(|x| (f64::from(x) / n) as f32);
        }
    }
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is
/// positive.
pub fn fix_sign(mut v: ArrayViewMut1<'_, f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
/// Returns eigenvalues and eigenvectors as rows.
pub fn symmetric_eigen_desc(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(c, order[r])]);
    (values, vectors)
}

/// `A^{-1/2}` for a symmetric positive definite matrix.
pub fn inv_sqrt_spd(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (values, vectors) = symmetric_eigen_desc(a);
    let floor = values[0].abs().max(f64::MIN_POSITIVE) * 1e-12;
    if values.iter().any(|&v| v <= floor) {
        return Err(Error::Validation(
            "matrix is not positive definite".into(),
        ));
    }
    let scaled = Array2::from_shape_fn(vectors.dim(), |(r, c)| vectors[[r, c]] / values[r].sqrt());
    Ok(vectors.t().dot(&scaled))
}

/// Rows spanning the same space as `rows`, orthonormalised by modified
/// Gram–Schmidt. Numerically dependent rows are dropped.
pub fn orthonormalize_rows(rows: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for row in rows.rows() {
        let mut v = row.to_owned();
        for q in &basis {
            let p = q.dot(&v);
            v.scaled_add(-p, q);
        }
        let n = norm(v.view());
        if n > 1e-10 * norm(row).max(f64::MIN_POSITIVE) {
            basis.push(v / n);
        }
    }
    let d = rows.ncols();
    let mut out = Array2::zeros((basis.len(), d));
    for (i, q) in basis.iter().enumerate() {
        out.row_mut(i).assign(q);
    }
    out
}

/// Rows `D` with `Dᵀ U x` equal to the orthogonal projection of `x` onto the
/// row space of `U` (`D = (U Uᵀ)⁻¹ U`).
pub fn dual_rows(u: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let gram = to_nalgebra(u.dot(&u.t()).view());
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Validation("direction rows are linearly dependent".into()))?;
    Ok(from_nalgebra(&inv).dot(&u))
}

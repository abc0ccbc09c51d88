//! Batch forward pass and analytic gradients, generic over the float type so
//! the same code trains in f32 and is checked in f64.
//!
//! For one sample, with pre-activation `p = M_e x + b`, code `c = ReLU(p)`,
//! residual `r = M_dᵀ c − x`:
//!
//! ```text
//! ∂L/∂M_d[i] = 2 c_i r
//! g_i        = (2 ⟨M_d[i], r⟩ + α) · [p_i > 0]
//! ∂L/∂M_e[i] = g_i x
//! ∂L/∂b_i    = g_i
//! ```
//!
//! Tied dictionaries sum the encoder and decoder terms into `M`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat};

use crate::par::*;

/// Parameter views for one forward/backward pass. `decoder` is `None` for
/// tied weights.
#[derive(Clone, Copy)]
pub struct Params<'a, T> {
    pub encoder: ArrayView2<'a, T>,
    pub bias: ArrayView1<'a, T>,
    pub decoder: Option<ArrayView2<'a, T>>,
}

/// Summed (not averaged) loss terms and gradients over a batch.
#[derive(Debug, Clone)]
pub struct BatchGrad<T> {
    pub rows: usize,
    pub reconstruction: f64,
    /// Σ‖c‖₁ without the α factor.
    pub l1: f64,
    pub encoder: Array2<T>,
    pub bias: Array1<T>,
    pub decoder: Option<Array2<T>>,
}

impl<T: NdFloat> BatchGrad<T> {
    fn zeros(d_hid: usize, d_in: usize, tied: bool) -> Self {
        BatchGrad {
            rows: 0,
            reconstruction: 0.0,
            l1: 0.0,
            encoder: Array2::zeros((d_hid, d_in)),
            bias: Array1::zeros(d_hid),
            decoder: (!tied).then(|| Array2::zeros((d_hid, d_in))),
        }
    }

    fn add(&mut self, other: &BatchGrad<T>) {
        self.rows += other.rows;
        self.reconstruction += other.reconstruction;
        self.l1 += other.l1;
        self.encoder += &other.encoder;
        self.bias += &other.bias;
        if let (Some(a), Some(b)) = (&mut self.decoder, &other.decoder) {
            *a += b;
        }
    }

    /// Mean loss over the rows: `(reconstruction, α·l1)`.
    pub fn mean_terms(&self, alpha: f64) -> (f64, f64) {
        let n = self.rows.max(1) as f64;
        (self.reconstruction / n, alpha * self.l1 / n)
    }

    /// Divides gradients by the row count, giving the gradient of the mean
    /// per-sample loss.
    pub fn into_mean(mut self) -> Self {
        let scale = T::one() / T::from(self.rows.max(1)).unwrap();
        self.encoder *= scale;
        self.bias *= scale;
        if let Some(d) = &mut self.decoder {
            *d *= scale;
        }
        self
    }
}

fn chunk_grad<T: NdFloat>(p: Params<'_, T>, x: ArrayView2<'_, T>, alpha: T) -> BatchGrad<T> {
    let two = T::one() + T::one();
    let dec = p.decoder.unwrap_or(p.encoder);
    let pre = x.dot(&p.encoder.t()) + p.bias;
    let c = pre.mapv(|v| if v > T::zero() { v } else { T::zero() });
    let r = c.dot(&dec) - x;

    let reconstruction = r.iter().map(|v| v.to_f64().unwrap().powi(2)).sum();
    let l1 = c.iter().map(|v| v.to_f64().unwrap()).sum();

    let mut g = r.dot(&dec.t());
    ndarray::Zip::from(&mut g).and(&pre).for_each(|gi, &pi| {
        *gi = if pi > T::zero() { two * *gi + alpha } else { T::zero() };
    });

    let mut encoder = g.t().dot(&x);
    let bias = g.sum_axis(Axis(0));
    let dec_grad = c.t().dot(&r) * two;
    let decoder = if p.decoder.is_some() {
        Some(dec_grad)
    } else {
        encoder += &dec_grad;
        None
    };
    BatchGrad {
        rows: x.nrows(),
        reconstruction,
        l1,
        encoder,
        bias,
        decoder,
    }
}

/// Loss sums and gradient sums over all rows of `x`. Rows are processed in
/// fixed chunks whose partial results are added in chunk order.
pub fn batch_loss_and_grad<T: NdFloat>(p: Params<'_, T>, x: ArrayView2<'_, T>, alpha: T) -> BatchGrad<T> {
    let (d_hid, d_in) = p.encoder.dim();
    let parts: Vec<BatchGrad<T>> = crate::par::row_chunks(x.nrows())
        .into_par_iter()
        .map(|r| chunk_grad(p, x.slice(s![r, ..]), alpha))
        .collect();
    let mut total = BatchGrad::zeros(d_hid, d_in, p.decoder.is_none());
    for part in &parts {
        total.add(part);
    }
    total
}

/// Mean per-sample loss `(total, reconstruction, sparsity)` without
/// gradients, accumulated in f64.
pub fn batch_loss<T: NdFloat>(p: Params<'_, T>, x: ArrayView2<'_, T>, alpha: T) -> (f64, f64, f64) {
    let dec = p.decoder.unwrap_or(p.encoder);
    let pre = x.dot(&p.encoder.t()) + p.bias;
    let c = pre.mapv(|v| if v > T::zero() { v } else { T::zero() });
    let r = c.dot(&dec) - x;
    let n = x.nrows().max(1) as f64;
    let recon = r.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>() / n;
    let sparsity = alpha.to_f64().unwrap() * c.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n;
    (recon + sparsity, recon, sparsity)
}

use ndarray::{Array1, ArrayView2, Axis};

/// Streaming per-dimension mean and centred sum of squares, accumulated in
/// f64 by merging per-batch two-pass summaries (Chan et al.).
#[derive(Debug, Clone, PartialEq)]
pub struct DimStats {
    count: u64,
    mean: Array1<f64>,
    m2: Array1<f64>,
}

impl DimStats {
    pub fn new(d_in: usize) -> Self {
        DimStats {
            count: 0,
            mean: Array1::zeros(d_in),
            m2: Array1::zeros(d_in),
        }
    }

    pub fn from_batch(batch: ArrayView2<'_, f32>) -> Self {
        let n = batch.nrows();
        let d = batch.ncols();
        if n == 0 {
            return Self::new(d);
        }
        let x = batch.mapv(f64::from);
        let mean = x.sum_axis(Axis(0)) / n as f64;
        let centred = &x - &mean;
        let m2 = (&centred * &centred).sum_axis(Axis(0));
        DimStats {
            count: n as u64,
            mean,
            m2,
        }
    }

    pub fn push_batch(&mut self, batch: ArrayView2<'_, f32>) {
        let other = Self::from_batch(batch);
        self.merge(&other);
    }

    pub fn merge(&mut self, other: &DimStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean = &self.mean + &(&delta * (nb / n));
        self.m2 = &self.m2 + &other.m2 + &(&delta * &delta * (na * nb / n));
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// Population variance per dimension (divides by n).
    pub fn variance(&self) -> Array1<f64> {
        if self.count == 0 {
            return Array1::zeros(self.mean.len());
        }
        &self.m2 / self.count as f64
    }

    /// Σ_i ‖x_i − x̄‖², the FVU denominator.
    pub fn total_scatter(&self) -> f64 {
        self.m2.sum()
    }
}

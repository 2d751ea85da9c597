use crate::error::{ImlError, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
/// stored row-major in packed-square form.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the row-major `n x n` matrix `a`. Only the lower triangle is read.
    pub(crate) fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        for j in 0..n {
            let row_j = j * n;
            let mut d = a[row_j + j];
            for k in 0..j {
                d -= a[row_j + k] * a[row_j + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(ImlError::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            a[row_j + j] = d;
            for i in (j + 1)..n {
                let row_i = i * n;
                let mut s = a[row_i + j];
                for k in 0..j {
                    s -= a[row_i + k] * a[row_j + k];
                }
                a[row_i + j] = s / d;
            }
            for k in (j + 1)..n {
                a[row_j + k] = 0.0;
            }
        }
        Ok(Self { n, l: a })
    }

    /// Solves `L x = b`.
    pub(crate) fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        x
    }

    /// Solves `L^T x = b`.
    pub(crate) fn backward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solves `(L L^T) x = b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// `log det(L L^T)`.
    pub(crate) fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }
}

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// 2-D discrete Fourier transform on a fixed periodic grid.
///
/// Used to diagonalise circulant (shift-invariant) operators: a real symmetric
/// circulant acts as pointwise multiplication by its real eigenvalues in the
/// frequency domain.
#[derive(Clone)]
pub struct Grid2Fft {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid2Fft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2Fft").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Grid2Fft {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        for r in buf.chunks_exact_mut(self.cols) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for (r, v) in column.iter_mut().enumerate() {
                *v = buf[r * self.cols + c];
            }
            col.process(&mut column);
            for (r, v) in column.iter().enumerate() {
                buf[r * self.cols + c] = *v;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.row_fwd, &self.col_fwd);
        buf
    }

    /// Inverse transform, normalised, keeping the real part.
    pub fn inverse_real(&self, mut freq: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut freq, &self.row_inv, &self.col_inv);
        let k = 1.0 / self.len() as f64;
        freq.iter().map(|c| c.re * k).collect()
    }

    /// Applies the circulant operator whose eigenvalue at frequency `k` is
    /// `gain(k)`.
    pub fn apply(&self, x: &[f64], gain: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut freq = self.forward(x);
        for (k, v) in freq.iter_mut().enumerate() {
            *v *= gain(k);
        }
        self.inverse_real(freq)
    }
}

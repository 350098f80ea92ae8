use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{randn, Grid2Fft, RngStream, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gaussian-shaped covariance kernel over cyclic grid offsets.
///
/// `k(δ) = variance · exp(-q(δ)/2) + nugget·[δ = 0]` where `q` is the quadratic
/// form of a bivariate normal with row/column length scales and correlation
/// `rho`. A nonzero `rho` tilts the correlation along a diagonal, which breaks
/// mirror symmetry while keeping `k(δ) = k(-δ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldKernel {
    pub variance: f64,
    pub length_rows: f64,
    pub length_cols: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub nugget: f64,
}

impl FieldKernel {
    pub fn isotropic(variance: f64, length: f64, nugget: f64) -> Self {
        Self { variance, length_rows: length, length_cols: length, rho: 0.0, nugget }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.variance > 0.0
            && self.length_rows > 0.0
            && self.length_cols > 0.0
            && self.rho.abs() < 1.0
            && self.nugget >= 0.0
            && [self.variance, self.length_rows, self.length_cols, self.rho, self.nugget]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidModel(format!("bad field kernel {self:?}")));
        }
        Ok(())
    }

    fn value(&self, dy: f64, dx: f64) -> f64 {
        let (a, b) = (dy / self.length_rows, dx / self.length_cols);
        let q = (a * a - 2.0 * self.rho * a * b + b * b) / (1.0 - self.rho * self.rho);
        let nug = if dy == 0.0 && dx == 0.0 { self.nugget } else { 0.0 };
        self.variance * (-0.5 * q).exp() + nug
    }

    /// Mirror symmetric along both axes.
    pub fn is_symmetric(&self) -> bool {
        self.rho == 0.0
    }
}

fn wrap(i: usize, n: usize) -> f64 {
    if 2 * i <= n {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Stationary Gaussian random field on a periodic `rows × cols` grid.
///
/// The covariance is circulant, so it is diagonalised once by the 2-D DFT and
/// every marginal solve is a pointwise division in the frequency domain.
#[derive(Clone, Debug)]
pub struct StationaryField {
    rows: usize,
    cols: usize,
    mean: f64,
    kernel: FieldKernel,
    /// Covariance between cell 0 and the cell at each cyclic offset.
    kernel_grid: Vec<f64>,
    eigenvalues: Vec<f64>,
    fft: Grid2Fft,
}

impl PartialEq for StationaryField {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.mean == other.mean
            && self.kernel == other.kernel
    }
}

impl StationaryField {
    pub fn new(rows: usize, cols: usize, mean: f64, kernel: FieldKernel) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidModel("field grid must be non-empty".into()));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidModel("field mean must be finite".into()));
        }
        kernel.validate()?;
        let mut grid = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let fwd = kernel.value(wrap(i, rows), wrap(j, cols));
                let (ni, nj) = ((rows - i) % rows, (cols - j) % cols);
                let back = kernel.value(wrap(ni, rows), wrap(nj, cols));
                grid[i * cols + j] = 0.5 * (fwd + back);
            }
        }
        let fft = Grid2Fft::new(rows, cols);
        let eigenvalues: Vec<f64> = fft.forward(&grid).iter().map(|c| c.re).collect();
        let min = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min.is_nan() || min <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "field covariance is not positive definite (min eigenvalue {min:e}); add a nugget"
            )));
        }
        Ok(Self { rows, cols, mean, kernel, kernel_grid: grid, eigenvalues, fft })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn mean_level(&self) -> f64 {
        self.mean
    }

    pub fn kernel(&self) -> &FieldKernel {
        &self.kernel
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Covariance between cells `a` and `b`, given as `(row, col)`.
    pub fn covariance_entry(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let di = (b.0 + self.rows - a.0 % self.rows) % self.rows;
        let dj = (b.1 + self.cols - a.1 % self.cols) % self.cols;
        self.kernel_grid[di * self.cols + dj]
    }

    /// Dense covariance matrix; only sensible for small grids.
    pub fn covariance_matrix(&self) -> Result<Tensor> {
        let n = self.rows * self.cols;
        let mut data = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                data[p * n + q] =
                    self.covariance_entry((p / self.cols, p % self.cols), (q / self.cols, q % self.cols));
            }
        }
        Tensor::new(&[n, n], data)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.rows, self.cols] {
            return Err(Error::ShapeMismatch {
                left: vec![self.rows, self.cols],
                right: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn terms(&self, x: &Tensor, alpha_bar: f64) -> Result<(f64, Tensor)> {
        self.check(x)?;
        let shift = alpha_bar.sqrt() * self.mean;
        let r: Vec<f64> = x.data().iter().map(|v| v - shift).collect();
        let gain = |k: usize| 1.0 / (alpha_bar * self.eigenvalues[k] + 1.0 - alpha_bar);
        let sol = self.fft.apply(&r, gain);
        let quad: f64 = r.iter().zip(&sol).map(|(a, b)| a * b).sum();
        let log_det: f64 = self
            .eigenvalues
            .iter()
            .map(|l| (alpha_bar * l + 1.0 - alpha_bar).ln())
            .sum();
        let n = r.len() as f64;
        let logp = -0.5 * (n * LN_2PI + log_det + quad);
        let k = (1.0 - alpha_bar).sqrt();
        let eps = Tensor::new(x.shape(), sol.into_iter().map(|v| k * v).collect())?;
        Ok((logp, eps))
    }

    pub(crate) fn sample(&self, rng: &mut RngStream) -> Result<Tensor> {
        let w = randn(&[self.rows, self.cols], rng)?;
        let colored = self.fft.apply(w.data(), |k| self.eigenvalues[k].sqrt());
        Tensor::new(&[self.rows, self.cols], colored.into_iter().map(|v| v + self.mean).collect())
    }
}

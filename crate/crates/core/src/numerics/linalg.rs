use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Tolerance on `|A - Aᵀ|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, nalgebra::Dyn>,
    n: usize,
}

impl SpdFactor {
    pub fn new(a: &Tensor) -> Result<Self> {
        let (r, c) = a.matrix_dims()?;
        if r != c {
            return Err(Error::InvalidShape(format!("matrix is {r}x{c}, expected square")));
        }
        a.ensure_finite("spd factorization input")?;
        for i in 0..r {
            for j in (i + 1)..r {
                let (x, y) = (a.at(i, j), a.at(j, i));
                if (x - y).abs() > SYMMETRY_TOL * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::NotSpd(format!("asymmetric at ({i},{j}): {x} vs {y}")));
                }
            }
        }
        let m = DMatrix::from_row_slice(r, c, a.data());
        let chol = Cholesky::new(m).ok_or_else(|| Error::NotSpd("Cholesky decomposition failed".into()))?;
        Ok(Self { chol, n: r })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`; `b` is treated as a flat vector and `x` keeps its shape.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        if b.numel() != self.n {
            return Err(Error::ShapeMismatch {
                left: vec![self.n, self.n],
                right: b.shape().to_vec(),
            });
        }
        let x = self.chol.solve(&DVector::from_column_slice(b.data()));
        let out = Tensor::new(b.shape(), x.as_slice().to_vec())?;
        Ok(out)
    }

    /// `log det A`
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn min_pivot(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..self.n).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    /// `L z` where `A = L Lᵀ`; maps white noise to `N(0, A)`.
    pub fn lower_mul(&self, z: &Tensor) -> Result<Tensor> {
        if z.numel() != self.n {
            return Err(Error::ShapeMismatch {
                left: vec![self.n, self.n],
                right: z.shape().to_vec(),
            });
        }
        let l = self.chol.l();
        let v = l * DVector::from_column_slice(z.data());
        Tensor::new(z.shape(), v.as_slice().to_vec())
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    SpdFactor::new(a)?.solve(b)
}

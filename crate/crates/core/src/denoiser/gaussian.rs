use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{randn, RngStream, SpdFactor, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `x ~ N(mu, s2 I)`. A zero variance is a point mass at `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicGaussian {
    mean: Tensor,
    variance: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Tensor, variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::InvalidModel(format!("variance must be >= 0, got {variance}")));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    fn marginal_variance(&self, alpha_bar: f64) -> f64 {
        alpha_bar * self.variance + (1.0 - alpha_bar)
    }

    /// Log density of the noised marginal and the MMSE noise prediction.
    pub(crate) fn terms(&self, x: &Tensor, alpha_bar: f64) -> Result<(f64, Tensor)> {
        let v = self.marginal_variance(alpha_bar);
        let r = x.lincomb(1.0, &self.mean, -alpha_bar.sqrt())?;
        let d = x.numel() as f64;
        let logp = -0.5 * (d * LN_2PI + d * v.ln() + r.dot(&r)? / v);
        let eps = r.scale((1.0 - alpha_bar).sqrt() / v);
        Ok((logp, eps))
    }

    pub(crate) fn sample(&self, rng: &mut RngStream) -> Result<Tensor> {
        let w = randn(self.mean.shape(), rng)?;
        self.mean.lincomb(1.0, &w, self.variance.sqrt())
    }
}

/// `x ~ N(mu, Σ)` with dense SPD covariance.
#[derive(Clone, Debug)]
pub struct FullGaussian {
    mean: Tensor,
    covariance: Tensor,
    factor: SpdFactor,
}

impl PartialEq for FullGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

impl FullGaussian {
    pub fn new(mean: Tensor, covariance: Tensor) -> Result<Self> {
        let (r, c) = covariance.matrix_dims()?;
        if r != c || r != mean.numel() {
            return Err(Error::InvalidModel(format!(
                "covariance {r}x{c} does not match mean with {} elements",
                mean.numel()
            )));
        }
        let factor = SpdFactor::new(&covariance)
            .map_err(|e| Error::InvalidModel(format!("covariance: {e}")))?;
        if factor.min_pivot() <= 0.0 {
            return Err(Error::InvalidModel("covariance is singular".into()));
        }
        Ok(Self { mean, covariance, factor })
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn covariance(&self) -> &Tensor {
        &self.covariance
    }

    fn marginal_covariance(&self, alpha_bar: f64) -> Tensor {
        let n = self.mean.numel();
        let mut c = self.covariance.scale(alpha_bar);
        let data = c.data_mut();
        for i in 0..n {
            data[i * n + i] += 1.0 - alpha_bar;
        }
        c
    }

    pub(crate) fn terms(&self, x: &Tensor, alpha_bar: f64) -> Result<(f64, Tensor)> {
        let cov = self.marginal_covariance(alpha_bar);
        let f = SpdFactor::new(&cov)?;
        let r = x.lincomb(1.0, &self.mean, -alpha_bar.sqrt())?;
        let sol = f.solve(&r)?;
        let d = x.numel() as f64;
        let logp = -0.5 * (d * (2.0 * PI).ln() + f.log_det() + r.dot(&sol)?);
        Ok((logp, sol.scale((1.0 - alpha_bar).sqrt())))
    }

    pub(crate) fn sample(&self, rng: &mut RngStream) -> Result<Tensor> {
        let w = randn(self.mean.shape(), rng)?;
        self.mean.add(&self.factor.lower_mul(&w)?)
    }
}

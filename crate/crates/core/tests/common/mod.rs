//! Models and oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use efddpm::denoiser::{Component, FieldKernel, FullGaussian, IsotropicGaussian};
use efddpm::numerics::{randn, SpdFactor};
use efddpm::sampler::mu_hat;
use efddpm::{Condition, DenoiserModel, RngStream, Schedule, ScheduleConfig, Tensor};

pub fn schedule(steps: usize, eta: f64) -> Schedule {
    ScheduleConfig::standard(steps, eta).build().unwrap()
}

pub fn vector(v: &[f64]) -> Tensor {
    Tensor::vector(v).unwrap()
}

pub fn isotropic() -> DenoiserModel {
    DenoiserModel::isotropic(vector(&[1.0, -2.0, 0.5, 3.0]), 2.0).unwrap()
}

pub fn full_gaussian() -> DenoiserModel {
    let cov = Tensor::from_rows(&[vec![2.0, 0.8, 0.1], vec![0.8, 1.0, -0.3], vec![0.1, -0.3, 0.5]]).unwrap();
    DenoiserModel::full(vector(&[0.5, -1.0, 2.0]), cov).unwrap()
}

/// Three well-separated 2-D components, one with a full covariance.
pub fn gmm3() -> DenoiserModel {
    let iso = |m: &[f64], v: f64| Component::Isotropic(IsotropicGaussian::new(vector(m), v).unwrap());
    let full = FullGaussian::new(
        vector(&[0.0, 4.0]),
        Tensor::from_rows(&[vec![0.8, 0.3], vec![0.3, 0.5]]).unwrap(),
    )
    .unwrap();
    DenoiserModel::gmm(
        vec![0.3, 0.5, 0.2],
        vec![iso(&[-4.0, -1.0], 0.6), iso(&[3.0, -2.0], 0.3), Component::Full(full)],
    )
    .unwrap()
}

pub fn field(rows: usize, cols: usize, kernel: FieldKernel) -> DenoiserModel {
    DenoiserModel::field(rows, cols, 0.0, kernel).unwrap()
}

/// The 32×32 field used by the image-like experiments.
pub fn canonical_field() -> DenoiserModel {
    field(32, 32, FieldKernel::isotropic(1.0, 3.0, 1e-3))
}

pub fn small_field() -> DenoiserModel {
    DenoiserModel::field(6, 6, 0.25, FieldKernel::isotropic(1.0, 1.0, 1e-2)).unwrap()
}

pub fn conditional() -> DenoiserModel {
    let a = DenoiserModel::isotropic(vector(&[-3.0, 1.0]), 0.5).unwrap();
    let b = DenoiserModel::full(
        vector(&[3.0, -1.0]),
        Tensor::from_rows(&[vec![1.5, 0.6], vec![0.6, 0.8]]).unwrap(),
    )
    .unwrap();
    let u = DenoiserModel::gmm(
        vec![0.5, 0.5],
        vec![
            Component::Isotropic(IsotropicGaussian::new(vector(&[-3.0, 1.0]), 0.5).unwrap()),
            Component::Full(
                FullGaussian::new(
                    vector(&[3.0, -1.0]),
                    Tensor::from_rows(&[vec![1.5, 0.6], vec![0.6, 0.8]]).unwrap(),
                )
                .unwrap(),
            ),
        ],
    )
    .unwrap();
    DenoiserModel::conditional(BTreeMap::from([("a".to_string(), a), ("b".to_string(), b)]), Some(u)).unwrap()
}

/// Every model family with the condition labels to exercise.
pub fn families() -> Vec<(&'static str, DenoiserModel, Vec<Option<&'static str>>)> {
    vec![
        ("isotropic", isotropic(), vec![None]),
        ("full", full_gaussian(), vec![None]),
        ("gmm", gmm3(), vec![None]),
        ("field", canonical_field(), vec![None]),
        ("conditional", conditional(), vec![None, Some("a"), Some("b")]),
    ]
}

/// A draw from the forward marginal at step `t`.
pub fn marginal_draw(model: &DenoiserModel, s: &Schedule, t: usize, cond: Option<&str>, rng: &mut RngStream) -> Tensor {
    let x0 = model.sample(rng, cond).unwrap();
    let e = randn(x0.shape(), rng).unwrap();
    let ab = s.alpha_bar(t);
    x0.lincomb(ab.sqrt(), &e, (1.0 - ab).sqrt()).unwrap()
}

/// Worst relative error of `ε̂` against `-√(1-ᾱ_t)·∇log p_t` by central
/// differences, over `points` random `(x, t)`.
pub fn score_identity_error(model: &DenoiserModel, cond: Option<&str>, s: &Schedule, points: usize, rng: &mut RngStream) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let t = 1 + (rng.next_u64() % s.steps() as u64) as usize;
        let x = marginal_draw(model, s, t, cond, rng);
        let eps = model.predict_eps(&x, t, s, cond).unwrap();
        let k = (1.0 - s.alpha_bar(t)).sqrt();
        let mut fd = vec![0.0; x.numel()];
        for (i, g) in fd.iter_mut().enumerate() {
            let h = 1e-5 * (1.0 + x.data()[i].abs());
            let mut up = x.clone();
            up.data_mut()[i] += h;
            let mut dn = x.clone();
            dn.data_mut()[i] -= h;
            let lp = model.log_marginal(&up, t, s, cond).unwrap();
            let lm = model.log_marginal(&dn, t, s, cond).unwrap();
            *g = -k * (lp - lm) / (up.data()[i] - dn.data()[i]);
        }
        let fd = Tensor::new(x.shape(), fd).unwrap();
        worst = worst.max(eps.max_abs_diff(&fd).unwrap() / eps.max_abs());
    }
    worst
}

#[derive(Debug)]
pub struct MmseCheck {
    pub analytic: f64,
    pub linear: f64,
    /// Standard error of the paired per-sample difference.
    pub se_diff: f64,
    pub se_analytic: f64,
    pub params: usize,
    pub fit_size: usize,
}

impl MmseCheck {
    /// Analytic residual no worse than the best linear fit plus 3 standard errors.
    pub fn optimal(&self) -> bool {
        self.analytic <= self.linear + 3.0 * self.se_diff
    }

    /// For Gaussian data the best predictor is linear, so the two residuals
    /// agree up to sampling noise and the held-out cost of fitting `params`
    /// coefficients on `fit_size` pairs.
    pub fn matches(&self) -> bool {
        let fit_cost = 2.0 * self.params as f64 / self.fit_size as f64 * self.analytic;
        (self.analytic - self.linear).abs() <= 3.0 * self.se_diff.max(self.se_analytic) + fit_cost
    }
}

/// Regresses `ε` on `[1, x_t]` over `n` simulated pairs (first half fits,
/// second half scores) and compares with the analytic predictor.
pub fn mmse_regression(model: &DenoiserModel, cond: Option<&str>, s: &Schedule, t: usize, n: usize, rng: &mut RngStream) -> MmseCheck {
    let ab = s.alpha_bar(t);
    let mut xs = Vec::with_capacity(n);
    let mut es = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = model.sample(rng, cond).unwrap();
        let e = randn(x0.shape(), rng).unwrap();
        xs.push(x0.lincomb(ab.sqrt(), &e, (1.0 - ab).sqrt()).unwrap());
        es.push(e);
    }
    let d = xs[0].numel();
    let p = d + 1;
    let half = n / 2;
    let row = |x: &Tensor| std::iter::once(1.0).chain(x.data().iter().copied()).collect::<Vec<_>>();

    let mut gram = vec![0.0; p * p];
    let mut cross = vec![0.0; p * d];
    for (x, e) in xs[..half].iter().zip(&es[..half]) {
        let r = row(x);
        for i in 0..p {
            for j in 0..p {
                gram[i * p + j] += r[i] * r[j];
            }
            for j in 0..d {
                cross[i * d + j] += r[i] * e.data()[j];
            }
        }
    }
    let factor = SpdFactor::new(&Tensor::new(&[p, p], gram).unwrap()).unwrap();
    let mut coef = vec![0.0; p * d];
    for j in 0..d {
        let rhs = Tensor::vector(&(0..p).map(|i| cross[i * d + j]).collect::<Vec<_>>()).unwrap();
        let c = factor.solve(&rhs).unwrap();
        for i in 0..p {
            coef[i * d + j] = c.data()[i];
        }
    }

    let mut ra = Vec::with_capacity(n - half);
    let mut diff = Vec::with_capacity(n - half);
    for (x, e) in xs[half..].iter().zip(&es[half..]) {
        let r = row(x);
        let pred = model.predict_eps(x, t, s, cond).unwrap();
        let (mut a, mut l) = (0.0, 0.0);
        for j in 0..d {
            let lin: f64 = (0..p).map(|i| r[i] * coef[i * d + j]).sum();
            a += (e.data()[j] - pred.data()[j]).powi(2);
            l += (e.data()[j] - lin).powi(2);
        }
        ra.push(a / d as f64);
        diff.push((a - l) / d as f64);
    }
    let (analytic, se_analytic) = mean_se(&ra);
    let (dm, se_diff) = mean_se(&diff);
    MmseCheck { analytic, linear: analytic - dm, se_diff, se_analytic, params: p, fit_size: half }
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Worst scaled gap between `μ̂_t` at `η = 1` and the DDPM posterior mean
/// `(√ᾱ_{t-1} β_t x̂_0 + √α_t (1-ᾱ_{t-1}) x_t)/(1-ᾱ_t)`.
pub fn posterior_mean_gap(model: &DenoiserModel, cond: Option<&str>, s: &Schedule, points: usize, rng: &mut RngStream) -> f64 {
    assert_eq!(s.eta(), 1.0);
    let mut worst: f64 = 0.0;
    let c = Condition { label: cond.map(str::to_string), strength: None };
    for _ in 0..points {
        let t = 1 + (rng.next_u64() % s.steps() as u64) as usize;
        let x = marginal_draw(model, s, t, cond, rng);
        let mu = mu_hat(model, &x, t, s, &c).unwrap();
        let x0 = model.posterior_x0(&x, t, s, cond).unwrap();
        let (ab, abp) = (s.alpha_bar(t), s.alpha_bar(t - 1));
        let a = abp.sqrt() * s.beta(t) / (1.0 - ab);
        let b = s.alpha(t).sqrt() * (1.0 - abp) / (1.0 - ab);
        let reference = x0.lincomb(a, &x, b).unwrap();
        let scale = 1.0 + x.max_abs().max(x0.max_abs());
        worst = worst.max(mu.max_abs_diff(&reference).unwrap() / scale);
    }
    worst
}

pub fn roll(x: &Tensor, dr: usize, dc: usize) -> Tensor {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[((i + dr) % r) * c + (j + dc) % c] = x.data()[i * c + j];
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

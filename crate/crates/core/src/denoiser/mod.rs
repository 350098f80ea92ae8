//! Closed-form MMSE noise predictors.
//!
//! For data `x_0 ~ p` and `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε`, the predictor returns
//! `E[ε | x_t] = -√(1-ᾱ_t) ∇ log p_t(x_t)`, computed exactly for Gaussian,
//! Gaussian-mixture and stationary-field data. These stand in for a trained
//! ε-network in every sampler and inversion routine.

mod field;
mod gaussian;

use std::collections::BTreeMap;

pub use field::{FieldKernel, StationaryField};
pub use gaussian::{FullGaussian, IsotropicGaussian};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::schedule::Schedule;

/// Mixture component.
#[derive(Clone, Debug, PartialEq)]
pub enum Component {
    Isotropic(IsotropicGaussian),
    Full(FullGaussian),
}

impl Component {
    fn mean(&self) -> &Tensor {
        match self {
            Component::Isotropic(g) => g.mean(),
            Component::Full(g) => g.mean(),
        }
    }

    fn terms(&self, x: &Tensor, alpha_bar: f64) -> Result<(f64, Tensor)> {
        match self {
            Component::Isotropic(g) => g.terms(x, alpha_bar),
            Component::Full(g) => g.terms(x, alpha_bar),
        }
    }

    fn sample(&self, rng: &mut RngStream) -> Result<Tensor> {
        match self {
            Component::Isotropic(g) => g.sample(rng),
            Component::Full(g) => g.sample(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidModel(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidModel("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("mixture weights sum to {total}, not 1")));
        }
        let shape = components[0].mean().shape().to_vec();
        if components.iter().any(|c| c.mean().shape() != shape.as_slice()) {
            return Err(Error::InvalidModel("mixture components differ in shape".into()));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Log marginal and ε prediction; responsibilities via log-sum-exp.
    fn terms(&self, x: &Tensor, alpha_bar: f64) -> Result<(f64, Tensor)> {
        let mut logs = Vec::with_capacity(self.components.len());
        let mut eps = Vec::with_capacity(self.components.len());
        for (c, lw) in self.components.iter().zip(&self.log_weights) {
            let (lp, e) = c.terms(x, alpha_bar)?;
            logs.push(lw + lp);
            eps.push(e);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        let mut out = Tensor::zeros_like(x);
        for (l, e) in logs.iter().zip(&eps) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            for (o, v) in out.data_mut().iter_mut().zip(e.data()) {
                *o += r * v;
            }
        }
        Ok((lse, out))
    }

    fn sample(&self, rng: &mut RngStream) -> Result<Tensor> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].sample(rng)
    }
}

/// Condition-keyed family of models with an optional unconditional member.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditional {
    members: BTreeMap<String, DenoiserModel>,
    unconditional: Option<Box<DenoiserModel>>,
}

impl Conditional {
    pub fn new(members: BTreeMap<String, DenoiserModel>, unconditional: Option<DenoiserModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidModel("conditional model needs at least one condition".into()));
        }
        let all = members.values().chain(unconditional.iter());
        let mut shape: Option<Vec<usize>> = None;
        for m in all {
            if matches!(m, DenoiserModel::Conditional(_)) {
                return Err(Error::InvalidModel("conditional models cannot be nested".into()));
            }
            let s = m.data_shape();
            match &shape {
                Some(prev) if *prev != s => {
                    return Err(Error::InvalidModel("conditional members differ in shape".into()))
                }
                _ => shape = Some(s),
            }
        }
        Ok(Self { members, unconditional: unconditional.map(Box::new) })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn member(&self, label: &str) -> Result<&DenoiserModel> {
        self.members.get(label).ok_or_else(|| Error::UnknownCondition(label.to_string()))
    }

    pub fn unconditional(&self) -> Option<&DenoiserModel> {
        self.unconditional.as_deref()
    }

    fn resolve(&self, cond: Option<&str>) -> Result<&DenoiserModel> {
        match cond {
            Some(label) => self.member(label),
            None => self.unconditional().ok_or_else(|| {
                Error::InvalidModel("no condition given and the model has no unconditional member".into())
            }),
        }
    }
}

/// Analytic data distribution with an exact ε-predictor.
#[derive(Clone, Debug, PartialEq)]
pub enum DenoiserModel {
    IsotropicGaussian(IsotropicGaussian),
    FullGaussian(FullGaussian),
    Gmm(Gmm),
    StationaryField(StationaryField),
    Conditional(Conditional),
}

/// Which prediction the sampler asks for: an optional condition label and an
/// optional classifier-free guidance strength.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Condition {
    pub label: Option<String>,
    pub strength: Option<f64>,
}

impl Condition {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn label(label: impl Into<String>) -> Self {
        Self { label: Some(label.into()), strength: None }
    }

    pub fn guided(label: impl Into<String>, strength: f64) -> Self {
        Self { label: Some(label.into()), strength: Some(strength) }
    }

    pub fn as_label(&self) -> Option<&str> {
        self.label.as_deref()
    }
}

fn alpha_bar_at(schedule: &Schedule, t: usize) -> Result<f64> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::TimestepOutOfRange { t, max: schedule.steps() });
    }
    Ok(schedule.alpha_bar(t))
}

impl DenoiserModel {
    pub fn isotropic(mean: Tensor, variance: f64) -> Result<Self> {
        Ok(Self::IsotropicGaussian(IsotropicGaussian::new(mean, variance)?))
    }

    pub fn full(mean: Tensor, covariance: Tensor) -> Result<Self> {
        Ok(Self::FullGaussian(FullGaussian::new(mean, covariance)?))
    }

    pub fn gmm(weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        Ok(Self::Gmm(Gmm::new(weights, components)?))
    }

    pub fn field(rows: usize, cols: usize, mean: f64, kernel: FieldKernel) -> Result<Self> {
        Ok(Self::StationaryField(StationaryField::new(rows, cols, mean, kernel)?))
    }

    pub fn conditional(members: BTreeMap<String, DenoiserModel>, unconditional: Option<DenoiserModel>) -> Result<Self> {
        Ok(Self::Conditional(Conditional::new(members, unconditional)?))
    }

    /// Shape of `x_0` (and every `x_t`).
    pub fn data_shape(&self) -> Vec<usize> {
        match self {
            Self::IsotropicGaussian(g) => g.mean().shape().to_vec(),
            Self::FullGaussian(g) => g.mean().shape().to_vec(),
            Self::Gmm(g) => g.components[0].mean().shape().to_vec(),
            Self::StationaryField(f) => f.shape().to_vec(),
            Self::Conditional(c) => c.members.values().next().map(|m| m.data_shape()).unwrap_or_default(),
        }
    }

    fn leaf(&self, cond: Option<&str>) -> Result<&DenoiserModel> {
        match self {
            Self::Conditional(c) => c.resolve(cond),
            other => Ok(other),
        }
    }

    fn check_shape(&self, x: &Tensor) -> Result<()> {
        let s = self.data_shape();
        if x.shape() != s.as_slice() {
            return Err(Error::ShapeMismatch { left: s, right: x.shape().to_vec() });
        }
        Ok(())
    }

    /// `(log p_t(x), E[ε | x_t = x])` at noise level `alpha_bar`.
    pub fn terms_at(&self, x: &Tensor, alpha_bar: f64, cond: Option<&str>) -> Result<(f64, Tensor)> {
        self.check_shape(x)?;
        match self.leaf(cond)? {
            Self::IsotropicGaussian(g) => g.terms(x, alpha_bar),
            Self::FullGaussian(g) => g.terms(x, alpha_bar),
            Self::Gmm(g) => g.terms(x, alpha_bar),
            Self::StationaryField(f) => f.terms(x, alpha_bar),
            Self::Conditional(_) => unreachable!("conditional members are never conditional"),
        }
    }

    /// `E[ε_t | x_t]` under the model (or its `cond` member).
    pub fn predict_eps(&self, x: &Tensor, t: usize, schedule: &Schedule, cond: Option<&str>) -> Result<Tensor> {
        let ab = alpha_bar_at(schedule, t)?;
        Ok(self.terms_at(x, ab, cond)?.1)
    }

    /// `log p_t(x)`, the density of the noised marginal.
    pub fn log_marginal(&self, x: &Tensor, t: usize, schedule: &Schedule, cond: Option<&str>) -> Result<f64> {
        let ab = alpha_bar_at(schedule, t)?;
        Ok(self.terms_at(x, ab, cond)?.0)
    }

    /// `ε̂_u + w (ε̂_c - ε̂_u)`.
    pub fn cfg_predict(&self, x: &Tensor, t: usize, schedule: &Schedule, cond: &str, strength: f64) -> Result<Tensor> {
        let Self::Conditional(c) = self else {
            return Err(Error::InvalidModel("guidance requires a conditional model".into()));
        };
        if c.unconditional.is_none() {
            return Err(Error::InvalidModel("guidance requires an unconditional member".into()));
        }
        c.member(cond)?;
        let ab = alpha_bar_at(schedule, t)?;
        let eps_c = self.terms_at(x, ab, Some(cond))?.1;
        let eps_u = self.terms_at(x, ab, None)?.1;
        eps_u.lincomb(1.0 - strength, &eps_c, strength)
    }

    /// Dispatches to [`cfg_predict`](Self::cfg_predict) when a strength is set,
    /// otherwise to [`predict_eps`](Self::predict_eps).
    pub fn predict(&self, x: &Tensor, t: usize, schedule: &Schedule, cond: &Condition) -> Result<Tensor> {
        match (cond.strength, cond.as_label()) {
            (Some(w), Some(label)) => self.cfg_predict(x, t, schedule, label, w),
            (Some(_), None) => Err(Error::InvalidModel("guidance strength given without a condition".into())),
            (None, label) => self.predict_eps(x, t, schedule, label),
        }
    }

    /// `(x_t - √(1-ᾱ_t) ε̂) / √ᾱ_t`, the exact posterior mean `E[x_0 | x_t]`.
    pub fn posterior_x0(&self, x: &Tensor, t: usize, schedule: &Schedule, cond: Option<&str>) -> Result<Tensor> {
        let ab = alpha_bar_at(schedule, t)?;
        let eps = self.predict_eps(x, t, schedule, cond)?;
        let inv = 1.0 / ab.sqrt();
        x.lincomb(inv, &eps, -(1.0 - ab).sqrt() * inv)
    }

    /// `E[x_0]` under the model (or its `cond` member).
    pub fn data_mean(&self, cond: Option<&str>) -> Result<Tensor> {
        match self.leaf(cond)? {
            Self::IsotropicGaussian(g) => Ok(g.mean().clone()),
            Self::FullGaussian(g) => Ok(g.mean().clone()),
            Self::Gmm(g) => {
                let mut acc = Tensor::zeros(g.components[0].mean().shape())?;
                for (w, c) in g.weights.iter().zip(&g.components) {
                    acc = acc.lincomb(1.0, c.mean(), *w)?;
                }
                Ok(acc)
            }
            Self::StationaryField(f) => Tensor::full(&f.shape(), f.mean_level()),
            Self::Conditional(_) => unreachable!("conditional members are never conditional"),
        }
    }

    /// Draws `x_0` from the data distribution.
    pub fn sample(&self, rng: &mut RngStream, cond: Option<&str>) -> Result<Tensor> {
        match self.leaf(cond)? {
            Self::IsotropicGaussian(g) => g.sample(rng),
            Self::FullGaussian(g) => g.sample(rng),
            Self::Gmm(g) => g.sample(rng),
            Self::StationaryField(f) => f.sample(rng),
            Self::Conditional(_) => unreachable!("conditional members are never conditional"),
        }
    }
}

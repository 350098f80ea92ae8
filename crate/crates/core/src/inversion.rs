//! Extracting noise maps that regenerate a given `x_0`.
//!
//! Any chain `x_0, …, x_T` starting at the target yields consistent maps by
//! solving the reverse step for `z_t`. The methods here differ only in how the
//! chain is built:
//!
//! * edit-friendly: `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε̃_t` with independent `ε̃_t`;
//! * CycleDiffusion-style: a stochastic posterior walk from `x_T ~ N(0, I)`;
//! * DDIM: the deterministic approximate inversion (no noise maps at all).

use std::fmt;

use crate::denoiser::{Condition, DenoiserModel};
use crate::error::{Error, Result};
use crate::numerics::{randn, RngStream, Tensor};
use crate::sampler::{add_noise, mu_from_eps, mu_hat, predicted_x0};
use crate::schedule::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    EditFriendly,
    CycleDiffusion,
    Native,
    Ddim,
}

impl Method {
    pub fn tag(self) -> u8 {
        match self {
            Method::EditFriendly => 0,
            Method::CycleDiffusion => 1,
            Method::Native => 2,
            Method::Ddim => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Method::EditFriendly,
            1 => Method::CycleDiffusion,
            2 => Method::Native,
            3 => Method::Ddim,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::EditFriendly => "edit-friendly",
            Method::CycleDiffusion => "cyclediffusion",
            Method::Native => "native",
            Method::Ddim => "ddim",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `{x_T, z_T, …, z_1}` plus, optionally, the chain it was extracted from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    method: Method,
    x_t: Tensor,
    /// `noise[t-1]` is `z_t`.
    noise: Vec<Tensor>,
    /// `aux[t]` is `x_t`, for `t` in `0..=T`.
    aux: Option<Vec<Tensor>>,
    cond: Option<String>,
    fingerprint: u64,
    z1_convention: bool,
}

impl LatentCode {
    pub fn new(
        method: Method,
        x_t: Tensor,
        noise: Vec<Tensor>,
        aux: Option<Vec<Tensor>>,
        cond: Option<String>,
        fingerprint: u64,
        z1_convention: bool,
    ) -> Result<Self> {
        if noise.is_empty() {
            return Err(Error::InvalidInput("latent code needs at least one noise map".into()));
        }
        let shape = x_t.shape();
        if noise.iter().any(|z| z.shape() != shape) {
            return Err(Error::InvalidInput("noise maps differ in shape from x_T".into()));
        }
        if let Some(chain) = &aux {
            if chain.len() != noise.len() + 1 || chain.iter().any(|x| x.shape() != shape) {
                return Err(Error::InvalidInput("auxiliary chain length or shape is inconsistent".into()));
            }
        }
        Ok(Self { method, x_t, noise, aux, cond, fingerprint, z1_convention })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn steps(&self) -> usize {
        self.noise.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.x_t.shape()
    }

    pub fn x_t(&self) -> &Tensor {
        &self.x_t
    }

    /// `z_t` for `t` in `1..=T`.
    pub fn z(&self, t: usize) -> &Tensor {
        &self.noise[t - 1]
    }

    /// `z_1, …, z_T` in that order.
    pub fn noise(&self) -> &[Tensor] {
        &self.noise
    }

    pub fn aux_chain(&self) -> Option<&[Tensor]> {
        self.aux.as_deref()
    }

    pub fn cond(&self) -> Option<&str> {
        self.cond.as_deref()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn z1_convention(&self) -> bool {
        self.z1_convention
    }

    /// Applies `f` to `x_T`, every noise map and every chain state.
    pub fn try_map(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<LatentCode> {
        Ok(LatentCode {
            x_t: f(&self.x_t)?,
            noise: self.noise.iter().map(&f).collect::<Result<_>>()?,
            aux: match &self.aux {
                Some(chain) => Some(chain.iter().map(&f).collect::<Result<_>>()?),
                None => None,
            },
            ..self.clone()
        })
    }

    /// Drops the auxiliary chain, keeping only `{x_T, z_T, …, z_1}`.
    pub fn without_aux(mut self) -> Self {
        self.aux = None;
        self
    }

    pub fn check_schedule(&self, schedule: &Schedule) -> Result<()> {
        if self.fingerprint != schedule.fingerprint() {
            return Err(Error::IncompatibleLatent(format!(
                "latent fingerprint {:016x} does not match schedule {:016x}",
                self.fingerprint,
                schedule.fingerprint()
            )));
        }
        if self.steps() != schedule.steps() {
            return Err(Error::IncompatibleLatent(format!(
                "latent has {} steps, schedule has {}",
                self.steps(),
                schedule.steps()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InversionOptions {
    /// Replace `x_{t-1}` by `μ̂_t(x_t) + σ_t z_t` after each extraction so the
    /// next step sees exactly the state generation will produce.
    pub reproject: bool,
    /// Leave `z_1 = 0` and stop extracting at `t = 2`. The final step then
    /// returns `μ̂_1(x_1)`, which is only approximately `x_0`.
    pub z1_convention: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self { reproject: true, z1_convention: false }
    }
}

/// `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε̃_t` with a fresh `ε̃_t` per step; index 0 is `x_0`.
pub fn build_aux_chain(x0: &Tensor, schedule: &Schedule, rng: &mut RngStream) -> Result<Vec<Tensor>> {
    x0.ensure_finite("inversion input")?;
    let mut chain = Vec::with_capacity(schedule.steps() + 1);
    chain.push(x0.clone());
    for t in 1..=schedule.steps() {
        let ab = schedule.alpha_bar(t);
        let noise = randn(x0.shape(), rng)?;
        chain.push(x0.lincomb(ab.sqrt(), &noise, (1.0 - ab).sqrt())?);
    }
    Ok(chain)
}

/// Extracts `z_t = (x_{t-1} - μ̂_t(x_t)) / σ_t` for `t = T..1` from `chain`.
pub fn noise_from_chain(
    chain: &[Tensor],
    model: &DenoiserModel,
    schedule: &Schedule,
    cond: &Condition,
    opts: InversionOptions,
    method: Method,
) -> Result<LatentCode> {
    let steps = schedule.steps();
    if chain.len() != steps + 1 {
        return Err(Error::InvalidInput(format!(
            "chain has {} states, expected T + 1 = {}",
            chain.len(),
            steps + 1
        )));
    }
    if let Some(t) = (2..=steps).find(|&t| schedule.sigma(t) == 0.0) {
        return Err(Error::DivisionByZero(format!(
            "σ_{t} = 0 (η = {}); noise maps cannot be extracted, use DDIM inversion instead",
            schedule.eta()
        )));
    }
    let shape = model.data_shape();
    if let Some(bad) = chain.iter().find(|x| x.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch { left: shape, right: bad.shape().to_vec() });
    }
    let mut noise = vec![Tensor::zeros(&shape)?; steps];
    let mut x = chain[steps].clone();
    for t in (1..=steps).rev() {
        let mu = mu_hat(model, &x, t, schedule, cond)?;
        if t == 1 && opts.z1_convention {
            x = mu;
            continue;
        }
        let z = chain[t - 1].lincomb(1.0, &mu, -1.0)?.scale(1.0 / schedule.noise_scale(t));
        z.ensure_finite(&format!("extracted z_{t}"))?;
        x = if opts.reproject {
            add_noise(&mu, &z, t, schedule)?
        } else {
            chain[t - 1].clone()
        };
        noise[t - 1] = z;
    }
    LatentCode::new(
        method,
        chain[steps].clone(),
        noise,
        Some(chain.to_vec()),
        cond.label.clone(),
        schedule.fingerprint(),
        opts.z1_convention,
    )
}

/// Edit-friendly inversion: independent-noise chain, then extraction with
/// re-projection.
pub fn edit_friendly_invert(
    x0: &Tensor,
    model: &DenoiserModel,
    schedule: &Schedule,
    rng: &mut RngStream,
    cond: &Condition,
) -> Result<LatentCode> {
    edit_friendly_invert_with(x0, model, schedule, rng, cond, InversionOptions::default())
}

pub fn edit_friendly_invert_with(
    x0: &Tensor,
    model: &DenoiserModel,
    schedule: &Schedule,
    rng: &mut RngStream,
    cond: &Condition,
    opts: InversionOptions,
) -> Result<LatentCode> {
    if schedule.eta() == 0.0 {
        return Err(Error::DivisionByZero(
            "edit-friendly inversion needs η > 0; use DDIM inversion for η = 0".into(),
        ));
    }
    let chain = build_aux_chain(x0, schedule, rng)?;
    noise_from_chain(&chain, model, schedule, cond, opts, Method::EditFriendly)
}

/// CycleDiffusion-style inversion.
///
/// The chain walks down from `x_T ~ N(0, I)` using the true `ε_t` implied by
/// `x_t` and `x_0` in place of the model prediction, with fresh noise at every
/// step. Stored maps are then extracted against the model's own predictor, so
/// the code is consistent.
pub fn cyclediffusion_invert(
    x0: &Tensor,
    model: &DenoiserModel,
    schedule: &Schedule,
    rng: &mut RngStream,
    cond: &Condition,
) -> Result<LatentCode> {
    if schedule.eta() == 0.0 {
        return Err(Error::DivisionByZero(
            "CycleDiffusion inversion needs η > 0; use DDIM inversion for η = 0".into(),
        ));
    }
    x0.ensure_finite("inversion input")?;
    let steps = schedule.steps();
    let mut chain = vec![x0.clone(); steps + 1];
    chain[steps] = randn(x0.shape(), rng)?;
    for t in (2..=steps).rev() {
        let ab = schedule.alpha_bar(t);
        let x = &chain[t];
        let eps = x.lincomb(1.0, x0, -ab.sqrt())?.scale(1.0 / (1.0 - ab).sqrt());
        let mu = mu_from_eps(x, &eps, t, schedule)?;
        let w = randn(x0.shape(), rng)?;
        chain[t - 1] = mu.lincomb(1.0, &w, schedule.sigma(t))?;
    }
    // σ_1 = 0 and the true ε collapse the last step onto x_0 itself.
    noise_from_chain(&chain, model, schedule, cond, InversionOptions::default(), Method::CycleDiffusion)
}

/// Approximate DDIM inversion.
///
/// Runs the deterministic (`η = 0`) update forwards, reusing the prediction
/// at the known state `x_{t-1}` for the step to `x_t`. The returned code has
/// all-zero noise maps and the fingerprint of the `η = 0` twin of `schedule`,
/// which is the schedule it must be regenerated with.
pub fn ddim_invert(
    x0: &Tensor,
    model: &DenoiserModel,
    schedule: &Schedule,
    cond: &Condition,
) -> Result<LatentCode> {
    let det = schedule.with_eta(0.0)?;
    x0.ensure_finite("inversion input")?;
    let steps = det.steps();
    let mut chain = Vec::with_capacity(steps + 1);
    chain.push(x0.clone());
    for t in 1..=steps {
        let prev = &chain[t - 1];
        let eps = model.predict(prev, t, &det, cond)?;
        // P from the known state at level t-1, then re-noised to level t.
        let ab_prev = det.alpha_bar(t - 1);
        let p = prev.lincomb(1.0 / ab_prev.sqrt(), &eps, -(1.0 - ab_prev).sqrt() / ab_prev.sqrt())?;
        let ab = det.alpha_bar(t);
        let next = p.lincomb(ab.sqrt(), &eps, (1.0 - ab).sqrt())?;
        next.ensure_finite(&format!("DDIM inversion t={t}"))?;
        chain.push(next);
    }
    let zero = Tensor::zeros(x0.shape())?;
    LatentCode::new(
        Method::Ddim,
        chain[steps].clone(),
        vec![zero; steps],
        Some(chain),
        cond.label.clone(),
        det.fingerprint(),
        true,
    )
}

/// `P(f_t(x_t))` under the given conditioning.
pub fn predicted_clean(
    model: &DenoiserModel,
    x: &Tensor,
    t: usize,
    schedule: &Schedule,
    cond: &Condition,
) -> Result<Tensor> {
    let eps = model.predict(x, t, schedule, cond)?;
    predicted_x0(x, &eps, t, schedule)
}

//! The reverse (generative) process.
//!
//! Each step is `x_{t-1} = μ̂_t(x_t) + σ_t z_t` with
//! `μ̂_t = √ᾱ_{t-1} P(f) + √(1-ᾱ_{t-1}-σ_t²) f` and `P(f) = (x_t - √(1-ᾱ_t) f)/√ᾱ_t`.
//! Where `σ_t = 0` the stored map is added unscaled (see
//! [`Schedule::noise_scale`]); sampling always stores a zero map there.

use crate::denoiser::{Condition, DenoiserModel};
use crate::error::{Error, Result};
use crate::inversion::{LatentCode, Method};
use crate::numerics::{randn, RngStream, Tensor};
use crate::schedule::Schedule;

/// Predicted clean sample `P(f)`.
pub fn predicted_x0(x: &Tensor, eps: &Tensor, t: usize, schedule: &Schedule) -> Result<Tensor> {
    let ab = schedule.alpha_bar(t);
    let inv = 1.0 / ab.sqrt();
    x.lincomb(inv, eps, -(1.0 - ab).sqrt() * inv)
}

/// `μ̂_t` for a given noise prediction `eps`.
pub fn mu_from_eps(x: &Tensor, eps: &Tensor, t: usize, schedule: &Schedule) -> Result<Tensor> {
    let p = predicted_x0(x, eps, t, schedule)?;
    p.lincomb(schedule.alpha_bar(t - 1).sqrt(), eps, schedule.direction_coef(t))
}

/// `μ̂_t(x_t)` using the model's prediction (guided when `cond.strength` is set).
pub fn mu_hat(model: &DenoiserModel, x: &Tensor, t: usize, schedule: &Schedule, cond: &Condition) -> Result<Tensor> {
    let eps = model.predict(x, t, schedule, cond)?;
    mu_from_eps(x, &eps, t, schedule)
}

/// `μ̂ + scale_t · z`, shared by generation and extraction so both produce the
/// same bits.
pub(crate) fn add_noise(mu: &Tensor, z: &Tensor, t: usize, schedule: &Schedule) -> Result<Tensor> {
    mu.lincomb(1.0, z, schedule.noise_scale(t))
}

/// One reverse step with a given noise map.
pub fn reverse_step(
    model: &DenoiserModel,
    x: &Tensor,
    z: &Tensor,
    t: usize,
    schedule: &Schedule,
    cond: &Condition,
) -> Result<Tensor> {
    let mu = mu_hat(model, x, t, schedule, cond)?;
    let next = add_noise(&mu, z, t, schedule)?;
    next.ensure_finite(&format!("reverse step t={t}"))?;
    Ok(next)
}

/// States and noise maps visited by one sampling run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Timestep the run started from (`T - T_skip`).
    pub start: usize,
    /// `xs[t]` for `t` in `0..=start`.
    pub xs: Vec<Tensor>,
    /// `zs[t-1]` is the map used at step `t`; zero for steps not executed.
    pub zs: Vec<Tensor>,
    pub cond: Condition,
    pub fingerprint: u64,
}

impl Trajectory {
    pub fn x0(&self) -> &Tensor {
        &self.xs[0]
    }

    /// The run's own noise maps as a latent code. Needs a full run (`T_skip = 0`).
    pub fn to_latent(&self) -> Result<LatentCode> {
        let steps = self.zs.len();
        if self.start != steps {
            return Err(Error::InvalidConfig(
                "a native latent needs a trajectory that started at x_T".into(),
            ));
        }
        LatentCode::new(
            Method::Native,
            self.xs[steps].clone(),
            self.zs.clone(),
            Some(self.xs.clone()),
            self.cond.label.clone(),
            self.fingerprint,
            self.zs[0].data().iter().all(|&v| v == 0.0),
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct SampleOptions {
    pub t_skip: usize,
    /// Starting state `x_{T-T_skip}`. Required when `t_skip > 0`; overrides the
    /// random `x_T` otherwise.
    pub x_init: Option<Tensor>,
}

/// Ancestral sampling, recording every state and noise map.
pub fn ddpm_sample(
    model: &DenoiserModel,
    schedule: &Schedule,
    rng: &mut RngStream,
    cond: &Condition,
    opts: &SampleOptions,
) -> Result<Trajectory> {
    let steps = schedule.steps();
    if opts.t_skip >= steps && opts.t_skip > 0 {
        return Err(Error::InvalidConfig(format!("T_skip {} must be below T = {steps}", opts.t_skip)));
    }
    let shape = model.data_shape();
    let start = steps - opts.t_skip;
    let x_start = match &opts.x_init {
        Some(x) => {
            if x.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch { left: shape, right: x.shape().to_vec() });
            }
            x.clone()
        }
        None if opts.t_skip > 0 => {
            return Err(Error::InvalidConfig("T_skip > 0 requires a starting state".into()))
        }
        None => randn(&shape, rng)?,
    };
    let zero = Tensor::zeros(&shape)?;
    let mut zs = vec![zero.clone(); steps];
    let mut xs = vec![zero; start + 1];
    xs[start] = x_start;
    for t in (1..=start).rev() {
        let z = if schedule.sigma(t) > 0.0 {
            randn(&shape, rng)?
        } else {
            Tensor::zeros(&shape)?
        };
        xs[t - 1] = reverse_step(model, &xs[t], &z, t, schedule, cond)?;
        zs[t - 1] = z;
    }
    Ok(Trajectory { start, xs, zs, cond: cond.clone(), fingerprint: schedule.fingerprint() })
}

/// Starting state for a generation pass that skips `t_skip` leading steps.
pub(crate) fn start_state(latent: &LatentCode, schedule: &Schedule, t_skip: usize) -> Result<Tensor> {
    latent.check_schedule(schedule)?;
    let steps = schedule.steps();
    if t_skip > steps {
        return Err(Error::InvalidConfig(format!("T_skip {t_skip} exceeds T = {steps}")));
    }
    if t_skip == 0 {
        return Ok(latent.x_t().clone());
    }
    match latent.aux_chain() {
        Some(chain) => Ok(chain[steps - t_skip].clone()),
        None => Err(Error::InvalidConfig(format!(
            "T_skip = {t_skip} needs the auxiliary chain, which this latent does not carry"
        ))),
    }
}

/// Runs the reverse process from `T - t_skip` using the latent's noise maps.
pub fn generate_from_latent(
    model: &DenoiserModel,
    schedule: &Schedule,
    latent: &LatentCode,
    cond: &Condition,
    t_skip: usize,
) -> Result<Tensor> {
    let mut x = start_state(latent, schedule, t_skip)?;
    for t in (1..=schedule.steps() - t_skip).rev() {
        x = reverse_step(model, &x, latent.z(t), t, schedule, cond)?;
    }
    Ok(x)
}

//! The diffusion variance schedule.
//!
//! All per-step arrays are indexed by the timestep `t` itself. Index 0 of
//! `beta`, `alpha` and `sigma` holds the neutral values `0, 1, 0` so that
//! `alpha_bar[t] = alpha_bar[t-1] * alpha[t]` reads the same at every `t`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Linear-β endpoints used by the experiments.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    steps: usize,
    eta: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    /// Base-schedule timestep retained at each index (identity when not respaced).
    base_timesteps: Vec<usize>,
    respaced: bool,
}

/// Parameters sufficient to rebuild a [`Schedule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    pub eta: f64,
    /// Number of inference steps; `None` keeps every training step.
    #[serde(default)]
    pub steps: Option<usize>,
}

fn default_train_steps() -> usize {
    DEFAULT_TRAIN_STEPS
}
fn default_beta_start() -> f64 {
    DEFAULT_BETA_START
}
fn default_beta_end() -> f64 {
    DEFAULT_BETA_END
}

impl ScheduleConfig {
    /// The standard linear schedule respaced to `steps` inference steps.
    pub fn standard(steps: usize, eta: f64) -> Self {
        Self {
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            eta,
            steps: Some(steps),
        }
    }

    pub fn build(&self) -> Result<Schedule> {
        let base = make_linear_schedule(self.train_steps, self.beta_start, self.beta_end, self.eta)?;
        match self.steps {
            Some(k) => base.respace(k),
            None => Ok(base),
        }
    }
}

fn sigmas(alpha_bar: &[f64], beta: &[f64], eta: f64) -> Vec<f64> {
    let mut sigma = vec![0.0; alpha_bar.len()];
    for t in 1..alpha_bar.len() {
        let var = beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
        sigma[t] = eta * var.max(0.0).sqrt();
    }
    sigma
}

/// Linear β schedule from `beta_start` to `beta_end` inclusive over `steps` steps.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64, eta: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::InvalidConfig("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta must lie in [0, 1], got {eta}")));
    }
    let mut beta = vec![0.0; steps + 1];
    for (i, b) in beta.iter_mut().skip(1).enumerate() {
        *b = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
        };
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let sigma = sigmas(&alpha_bar, &beta, eta);
    Ok(Schedule {
        steps,
        eta,
        beta,
        alpha,
        alpha_bar,
        sigma,
        base_timesteps: (0..=steps).collect(),
        respaced: false,
    })
}

impl Schedule {
    /// Number of reverse steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::TimestepOutOfRange { t, max: self.steps });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn base_timesteps(&self) -> &[usize] {
        &self.base_timesteps
    }

    pub fn is_respaced(&self) -> bool {
        self.respaced
    }

    /// Reverse-process noise scale `σ_t = η √(β_t (1-ᾱ_{t-1}) / (1-ᾱ_t))`.
    pub fn sigma_of(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.sigma[t])
    }

    /// Unchecked `σ_t`; `t` must be in `1..=T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    /// Coefficient `√(1 - ᾱ_{t-1} - σ_t²)` of the direction term.
    pub fn direction_coef(&self, t: usize) -> f64 {
        let s = self.sigma[t];
        (1.0 - self.alpha_bar[t - 1] - s * s).max(0.0).sqrt()
    }

    /// Multiplier applied to the stored noise map at step `t` during
    /// generation: `σ_t` when positive, otherwise 1. A zero `σ_t` only occurs
    /// at `t = 1` (where `ᾱ_0 = 1`) or when `η = 0`; the slot then carries an
    /// additive residual instead of a unit-variance noise map.
    pub fn noise_scale(&self, t: usize) -> f64 {
        let s = self.sigma[t];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// Same `ᾱ` sequence with a different `η`.
    pub fn with_eta(&self, eta: f64) -> Result<Schedule> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidConfig(format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Schedule {
            eta,
            sigma: sigmas(&self.alpha_bar, &self.beta, eta),
            ..self.clone()
        })
    }

    /// Uniform `k`-step subsequence ending at `T`. Retained `ᾱ` values are copied
    /// so they are bitwise identical to the base schedule.
    pub fn respace(&self, k: usize) -> Result<Schedule> {
        if k == 0 || k > self.steps {
            return Err(Error::InvalidConfig(format!(
                "cannot respace {} steps to {k}",
                self.steps
            )));
        }
        let idx: Vec<usize> = (0..=k).map(|i| i * self.steps / k).collect();
        let alpha_bar: Vec<f64> = idx.iter().map(|&i| self.alpha_bar[i]).collect();
        let mut alpha = vec![1.0; k + 1];
        let mut beta = vec![0.0; k + 1];
        for t in 1..=k {
            alpha[t] = alpha_bar[t] / alpha_bar[t - 1];
            beta[t] = 1.0 - alpha[t];
        }
        let sigma = sigmas(&alpha_bar, &beta, self.eta);
        Ok(Schedule {
            steps: k,
            eta: self.eta,
            beta,
            alpha,
            alpha_bar,
            sigma,
            base_timesteps: idx.iter().map(|&i| self.base_timesteps[i]).collect(),
            respaced: self.respaced || k != self.steps,
        })
    }

    /// 64-bit identifier of the exact numeric schedule (T, η, ᾱ, σ).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"efddpm-schedule-v1");
        h.update((self.steps as u64).to_le_bytes());
        h.update(self.eta.to_bits().to_le_bytes());
        for v in self.alpha_bar.iter().chain(&self.sigma) {
            h.update(v.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[..8]);
        u64::from_le_bytes(b)
    }
}

//! DDPM sampling, inversion and latent-space editing with closed-form denoisers.
//!
//! The crate implements DDPM/DDIM sampling, the independent-noise ("edit
//! friendly") inversion and its baselines, latent-space edit operators, and
//! the statistics used to compare latent spaces. A trained ε-network is
//! replaced throughout by the exact MMSE predictor of an analytic data
//! distribution, so every property can be checked against an oracle.

pub mod denoiser;
pub mod edits;
pub mod error;
pub mod harness;
pub mod inversion;
pub mod numerics;
pub mod sampler;
pub mod schedule;
pub mod stats;

pub use denoiser::{Condition, DenoiserModel};
pub use error::{Error, Result};
pub use inversion::{LatentCode, Method};
pub use numerics::{RngStream, Tensor};
pub use schedule::{Schedule, ScheduleConfig};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::numerics::Tensor;

/// Name of the generator backing every [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha20+box-muller";

/// Seeded, reproducible random stream.
///
/// The generator is ChaCha20 keyed by SHA-256 of the seed and the stream's
/// label path. Uniforms take the top 53 bits of each 64-bit word. Normals use
/// the Box-Muller transform with `libm` transcendentals, so sequences are
/// bit-identical across platforms. The second variate of each pair is cached.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    path: String,
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

fn derive_key(seed: u64, path: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"efddpm-rng-v1");
    h.update(seed.to_le_bytes());
    h.update((path.len() as u64).to_le_bytes());
    h.update(path.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    key
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, String::new())
    }

    fn with_path(seed: u64, path: String) -> Self {
        let rng = ChaCha20Rng::from_seed(derive_key(seed, &path));
        Self { seed, path, rng, spare: None }
    }

    /// Independent stream keyed by `(seed, path/label)`. Does not depend on,
    /// or advance, the parent's position.
    pub fn child(&self, label: &str) -> RngStream {
        let path = if self.path.is_empty() {
            label.to_string()
        } else {
            format!("{}/{label}", self.path)
        };
        Self::with_path(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.path
    }

    /// Position in 32-bit words within the ChaCha keystream.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// I.i.d. standard normal tensor.
pub fn randn(shape: &[usize], rng: &mut RngStream) -> Result<Tensor> {
    let mut t = Tensor::zeros(shape)?;
    rng.fill_normal(t.data_mut());
    Ok(t)
}

//! Dense tensors, seeded randomness and the small linear-algebra kernels the
//! rest of the crate is built on. Everything is `f64`.

mod linalg;
mod rng;
mod spectral;
mod tensor;

pub use linalg::{solve_spd, SpdFactor, SYMMETRY_TOL};
pub use rng::{randn, RngStream, RNG_ALGORITHM};
pub use spectral::Grid2Fft;
pub use tensor::Tensor;

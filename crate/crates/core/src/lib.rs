//! Gradient-descent dynamics of parameterized quantum circuits.
//!
//! The crate simulates random Pauli and hardware-efficient circuits on dense
//! statevectors, trains them on quadratic or linear losses while recording
//! the tangent kernel `K`, its derivative `mu` and the derived indices
//! `lambda = mu / K`, `zeta = eps mu / K^2` and `C = K - 2 lambda eps`, and
//! evaluates the Lotka-Volterra and unitary-ensemble closed forms these
//! quantities are compared against.

pub mod circuit;
pub mod derivatives;
pub mod error;
pub mod fit;
pub mod haar;
pub mod io;
pub mod observable;
pub mod pauli;
pub mod spectral;
pub mod state;
pub mod stats;
pub mod theory;
pub mod training;

pub use num_complex::Complex64 as C64;
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as SeedRng;

pub use error::{Error, Result};

/// Deterministic stream for a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

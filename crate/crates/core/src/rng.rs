//! Portable seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 (a counter-based
//! stream cipher generator) keyed by a 64-bit seed and a 64-bit stream id.
//! Unit Gaussians use the Box–Muller transform, consuming two 53-bit
//! uniforms per pair of outputs. Both pieces are fully specified, so a seed
//! reproduces the same field on every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Stream ids reserved for the solvers and the measurement model.
pub mod streams {
    pub const MEASUREMENT: u64 = 0;
    pub const SOLVER_INIT: u64 = 1;
    /// Re-noising at step `i` uses `RENOISE_BASE + i`.
    pub const RENOISE_BASE: u64 = 1 << 32;
}

pub struct SeededRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by multiply-shift.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_image(&mut self, height: usize, width: usize) -> Image {
        Image::from_fn(height, width, |_, _| self.normal())
    }
}

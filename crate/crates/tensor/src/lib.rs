//! Dense n-dimensional `f64` tensors with a minimal reverse-mode gradient
//! tape and a finite-difference gradient checker.
//!
//! Everything is row-major, contiguous, and 64-bit. The tape is thread-local
//! and explicitly scoped: call [`tape::start_recording`], register parameters
//! with [`tape::watch`], run the forward pass, then [`tape::backward`] to
//! obtain a [`tape::Gradients`] map. With no tape active, every op is a plain
//! evaluation with zero bookkeeping.

mod tensor;

pub mod gradcheck;
pub mod ops;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tensor::{Tensor, TensorError};

pub type Result<T> = std::result::Result<T, TensorError>;

/// Deterministic 64-bit mixer used for seed derivation and element sampling.
/// SplitMix64; kept dependency-free so the crate stays self-contained.
#[derive(Debug, Clone)]
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

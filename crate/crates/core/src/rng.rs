//! Portable seeded randomness.
//!
//! All randomness in the engine comes from SplitMix64, a 64-bit
//! counter-based generator: the `i`-th output (1-based) of a stream seeded
//! with `s` is `mix(s + i * 0x9E3779B97F4A7C15)` (wrapping), where `mix` is
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Floats in `[0, 1)` take the top 53 bits: `(x >> 11) * 2^-53`. Seeded
//! matrices are filled in row-major order with `2u - 1`, i.e. uniform on
//! `[-1, 1)`. Because every step is integer arithmetic plus one exact
//! conversion, streams are bit-identical on every platform.

use crate::linalg::{orthonormalize, Matrix};
use alloc::vec::Vec;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    #[inline]
    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    /// Uniform integer in `0..n` (multiply-high reduction). `n` must be > 0.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Draws `k` distinct indices from `0..n` by partial Fisher-Yates.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

/// FNV-1a over the bytes of `name`, mixed with `seed`. Used to give every
/// named parameter block of a session its own stream.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(seed ^ h)
}

/// Row-major matrix of uniform `[-1, 1)` draws, not orthonormalized.
pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols).map(|_| rng.next_symmetric()).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches")
}

/// Seeded weight matrix: uniform `[-1, 1)` draws, then columns orthonormalized
/// when `rows >= cols` (rows otherwise).
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut m = uniform_matrix(rows, cols, seed);
    orthonormalize(&mut m);
    m
}

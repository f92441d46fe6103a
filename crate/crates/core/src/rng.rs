//! Portable seeded randomness.
//!
//! All datasets, initializations and batch orders are driven by SplitMix64
//! (state advance `s += 0x9E3779B97F4A7C15`, output mix with the
//! `0xBF58476D1CE4E5B9` / `0x94D049BB133111EB` multipliers). The derived
//! samplers below are defined here rather than borrowed from a general
//! purpose library so that their exact bit streams stay fixed:
//!
//! * `next_f64` = `(next_u64 >> 11) · 2⁻⁵³`, uniform on `[0, 1)`.
//! * `below(n)` = rejection sampling on `next_u64` against the largest
//!   multiple of `n`, then `% n`.
//! * `shuffle` = Fisher–Yates from the last index down, using `below(i + 1)`.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct SplitMix {
    inner: SplitMix64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from `seed` and a stream label.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut base = SplitMix::new(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        SplitMix::new(base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in the inclusive range `lo..=hi`.
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let span = (hi as i128 - lo as i128 + 1) as u64;
        (lo as i128 + self.below(span) as i128) as i64
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

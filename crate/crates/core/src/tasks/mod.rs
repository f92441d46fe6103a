//! Deterministic synthetic datasets.
//!
//! Every generator is a pure function of its config; randomness comes from
//! [`SplitMix`](crate::rng::SplitMix) seeded with the config's seed, so the
//! same config yields the same bytes on every platform.

pub mod arithmetic;
pub mod pairwise;
pub mod sva;

pub use arithmetic::{ArithOp, ArithmeticConfig, Charset, TransductionExample};
pub use pairwise::{PairExample, PairwiseConfig};
pub use sva::{SvaConfig, SvaExample};

/// Fraction of predicted sequences equal to their target in every token.
pub fn exact_match(predictions: &[Vec<usize>], targets: &[Vec<usize>]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / targets.len() as f64
}

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SplitMix;

/// Padding id; never produced by the generator.
pub const PAD: usize = 0;
/// Separator id used when a pair is packed into one sequence.
pub const SEP: usize = 1;
/// First id available to content tokens.
pub const FIRST_TOKEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairExample {
    pub seq_a: Vec<usize>,
    pub seq_b: Vec<usize>,
    pub label: usize,
}

impl PairExample {
    /// `seq_a SEP seq_b`, for single-sequence encoders.
    pub fn packed(&self) -> Vec<usize> {
        let mut v = self.seq_a.clone();
        v.push(SEP);
        v.extend_from_slice(&self.seq_b);
        v
    }
}

/// Two-class pair task. Label 1: `seq_b` is a shuffled window of `seq_a`
/// covering at least half of it. Label 0: `seq_b` is sampled independently
/// and shares fewer than half of `seq_a`'s tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseConfig {
    pub n: usize,
    /// Ids are drawn from `FIRST_TOKEN..vocab`.
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Positives copy `seq_a` unchanged.
    pub verbatim: bool,
    pub seed: u64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        PairwiseConfig {
            n: 2000,
            vocab: 50,
            min_len: 4,
            max_len: 8,
            verbatim: false,
            seed: 1,
        }
    }
}

/// Size of the multiset intersection of `a` and `b`.
pub fn overlap(a: &[usize], b: &[usize]) -> usize {
    let mut rest = b.to_vec();
    let mut n = 0;
    for t in a {
        if let Some(p) = rest.iter().position(|x| x == t) {
            rest.swap_remove(p);
            n += 1;
        }
    }
    n
}

/// Whether `b` overlaps at least half of `a`.
pub fn is_positive(a: &[usize], b: &[usize]) -> bool {
    2 * overlap(a, b) >= a.len()
}

impl PairwiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config(
                "min_len",
                format!(
                    "need 1 <= min_len <= max_len, got {}..{}",
                    self.min_len, self.max_len
                ),
            ));
        }
        if self.vocab < FIRST_TOKEN + 4 {
            return Err(Error::config(
                "vocab",
                format!("must be at least {}", FIRST_TOKEN + 4),
            ));
        }
        Ok(())
    }

    fn sample_seq(&self, rng: &mut SplitMix) -> Vec<usize> {
        let len = self.min_len + rng.below((self.max_len - self.min_len + 1) as u64) as usize;
        (0..len)
            .map(|_| FIRST_TOKEN + rng.below((self.vocab - FIRST_TOKEN) as u64) as usize)
            .collect()
    }

    pub fn generate(&self) -> Result<Vec<PairExample>> {
        self.validate()?;
        let mut rng = SplitMix::new(self.seed);
        let mut labels: Vec<usize> = (0..self.n).map(|i| i % 2).collect();
        rng.shuffle(&mut labels);
        let mut out = Vec::with_capacity(self.n);
        for label in labels {
            let seq_a = self.sample_seq(&mut rng);
            let seq_b = if label == 1 {
                if self.verbatim {
                    seq_a.clone()
                } else {
                    let la = seq_a.len();
                    let lo = la.div_ceil(2).max(self.min_len).min(la);
                    let w = lo + rng.below((la - lo + 1) as u64) as usize;
                    let start = rng.below((la - w + 1) as u64) as usize;
                    let mut b = seq_a[start..start + w].to_vec();
                    rng.shuffle(&mut b);
                    b
                }
            } else {
                loop {
                    let b = self.sample_seq(&mut rng);
                    if !is_positive(&seq_a, &b) {
                        break b;
                    }
                }
            };
            out.push(PairExample {
                seq_a,
                seq_b,
                label,
            });
        }
        Ok(out)
    }
}

fn join(ids: &[usize]) -> String {
    let mut s = String::new();
    for (i, t) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{t}").unwrap();
    }
    s
}

/// One `label<TAB>seq_a<TAB>seq_b` line per example, ids space-separated.
pub fn to_tsv(examples: &[PairExample]) -> String {
    examples
        .iter()
        .map(|e| format!("{}\t{}\t{}\n", e.label, join(&e.seq_a), join(&e.seq_b)))
        .collect()
}

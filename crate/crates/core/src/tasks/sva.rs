use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SplitMix;

pub const PAD: usize = 0;

/// `(singular, plural)` noun pairs.
const NOUNS: [(&str, &str); 12] = [
    ("key", "keys"),
    ("cabinet", "cabinets"),
    ("author", "authors"),
    ("book", "books"),
    ("dog", "dogs"),
    ("house", "houses"),
    ("teacher", "teachers"),
    ("student", "students"),
    ("picture", "pictures"),
    ("wall", "walls"),
    ("farmer", "farmers"),
    ("field", "fields"),
];

const PREPOSITIONS: [&str; 6] = ["to", "near", "behind", "of", "with", "from"];

pub const SINGULAR: usize = 0;
pub const PLURAL: usize = 1;

/// Sentence prefix ending right before its main verb, labelled with the
/// number of the head subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SvaExample {
    pub words: Vec<String>,
    pub label: usize,
}

impl SvaExample {
    pub fn sentence(&self) -> String {
        self.words.join(" ")
    }

    pub fn ids(&self) -> Vec<usize> {
        self.words
            .iter()
            .map(|w| word_id(w).expect("generated words are in the vocabulary"))
            .collect()
    }
}

/// Vocabulary in id order, `PAD` first.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v = vec!["<pad>", "the"];
    v.extend(PREPOSITIONS);
    for (s, p) in NOUNS {
        v.push(s);
        v.push(p);
    }
    v
}

pub fn word_id(w: &str) -> Option<usize> {
    vocabulary().iter().position(|v| *v == w)
}

/// Template grammar `the N (P the N)*` with up to `depth` attractor phrases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SvaConfig {
    pub n: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for SvaConfig {
    fn default() -> Self {
        SvaConfig {
            n: 2000,
            depth: 2,
            seed: 1,
        }
    }
}

/// The head-subject number of a generated prefix: its second word.
pub fn head_number(words: &[String]) -> Option<usize> {
    let head = words.get(1)?;
    NOUNS.iter().find_map(|(s, p)| {
        if head == s {
            Some(SINGULAR)
        } else if head == p {
            Some(PLURAL)
        } else {
            None
        }
    })
}

impl SvaConfig {
    pub fn generate(&self) -> Result<Vec<SvaExample>> {
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        let mut rng = SplitMix::new(self.seed);
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let label = i % 2;
            let noun = |rng: &mut SplitMix, number: usize| {
                let (s, p) = NOUNS[rng.below(NOUNS.len() as u64) as usize];
                if number == PLURAL {
                    p
                } else {
                    s
                }
            };
            let mut words = vec!["the".to_string(), noun(&mut rng, label).to_string()];
            let phrases = rng.below(self.depth as u64 + 1) as usize;
            for _ in 0..phrases {
                let prep = PREPOSITIONS[rng.below(PREPOSITIONS.len() as u64) as usize];
                // attractors disagree with the head three times out of four
                let number = if rng.below(4) == 0 { label } else { 1 - label };
                words.extend([
                    prep.to_string(),
                    "the".to_string(),
                    noun(&mut rng, number).to_string(),
                ]);
            }
            out.push(SvaExample { words, label });
        }
        rng.shuffle(&mut out);
        Ok(out)
    }
}

/// One `label<TAB>sentence` line per example.
pub fn to_tsv(examples: &[SvaExample]) -> String {
    examples
        .iter()
        .map(|e| format!("{}\t{}\n", e.label, e.sentence()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_head_noun() {
        let data = SvaConfig {
            n: 500,
            depth: 3,
            seed: 4,
        }
        .generate()
        .unwrap();
        for e in &data {
            assert_eq!(head_number(&e.words), Some(e.label));
            assert!((e.words.len() - 2) % 3 == 0 && e.words.len() <= 2 + 3 * 3);
        }
        assert!(data.iter().any(|e| e.words.len() == 11));
    }

    #[test]
    fn depth_zero_has_no_attractor() {
        let data = SvaConfig {
            n: 20,
            depth: 0,
            seed: 1,
        }
        .generate()
        .unwrap();
        assert!(data.iter().all(|e| e.words.len() == 2));
        let key = SvaExample {
            words: vec!["the".into(), "key".into()],
            label: SINGULAR,
        };
        assert_eq!(head_number(&key.words), Some(SINGULAR));
    }

    #[test]
    fn attractor_example() {
        let words: Vec<String> = "the keys to the cabinet"
            .split(' ')
            .map(String::from)
            .collect();
        assert_eq!(head_number(&words), Some(PLURAL));
        let e = SvaExample {
            words,
            label: PLURAL,
        };
        assert_eq!(
            to_tsv(std::slice::from_ref(&e)),
            "1\tthe keys to the cabinet\n"
        );
        assert!(e.ids().iter().all(|&i| i > PAD && i < vocabulary().len()));
    }

    #[test]
    fn deterministic() {
        let c = SvaConfig::default();
        assert_eq!(c.generate().unwrap(), c.generate().unwrap());
    }
}

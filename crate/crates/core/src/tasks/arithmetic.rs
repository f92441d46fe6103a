use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SplitMix;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// Printable characters in id order after the three specials.
const CHARS: &str = "0123456789+-*=xy, ";

/// Character vocabulary: specials `PAD`, `BOS`, `EOS` followed by
/// `0-9 + - * = x y , ` and space.
#[derive(Debug, Clone, Copy, Default)]
pub struct Charset;

impl Charset {
    pub fn size() -> usize {
        3 + CHARS.len()
    }

    pub fn encode(s: &str) -> Result<Vec<usize>> {
        s.chars()
            .map(|ch| {
                CHARS
                    .chars()
                    .position(|c| c == ch)
                    .map(|p| p + 3)
                    .ok_or_else(|| {
                        Error::Contract(format!("character {ch:?} is not in the charset"))
                    })
            })
            .collect()
    }

    /// Inverse of [`Charset::encode`]; specials are dropped.
    pub fn decode(ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= 3)
            .filter_map(|&i| CHARS.chars().nth(i - 3))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArithOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
}

impl ArithOp {
    pub fn symbol(self) -> char {
        match self {
            ArithOp::Add => '+',
            ArithOp::Sub => '-',
            ArithOp::Mul => '*',
        }
    }

    pub fn apply(self, x: i128, y: i128) -> i128 {
        match self {
            ArithOp::Add => x + y,
            ArithOp::Sub => x - y,
            ArithOp::Mul => x * y,
        }
    }

    /// Parses a list such as `+-*` or `+,*`.
    pub fn parse_list(s: &str) -> Result<Vec<ArithOp>> {
        let ops = s
            .chars()
            .filter(|c| *c != ',' && !c.is_whitespace())
            .map(|c| c.to_string().parse())
            .collect::<Result<Vec<ArithOp>>>()?;
        if ops.is_empty() {
            return Err(Error::config("ops", "at least one operator is required"));
        }
        Ok(ops)
    }
}

impl FromStr for ArithOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" | "add" => Ok(ArithOp::Add),
            "-" | "sub" => Ok(ArithOp::Sub),
            "*" | "mul" => Ok(ArithOp::Mul),
            other => Err(Error::config("ops", format!("unknown operator `{other}`"))),
        }
    }
}

impl fmt::Display for ArithOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransductionExample {
    /// For example `x=85,y=-523,x*y`.
    pub source: String,
    /// For example `-44455`.
    pub target: String,
}

impl TransductionExample {
    pub fn source_ids(&self) -> Vec<usize> {
        Charset::encode(&self.source).expect("generated text is in the charset")
    }

    pub fn target_ids(&self) -> Vec<usize> {
        Charset::encode(&self.target).expect("generated text is in the charset")
    }

    /// Decoder input `BOS t₁ … tₙ` and output `t₁ … tₙ EOS`.
    pub fn teacher_forcing(&self) -> (Vec<usize>, Vec<usize>) {
        let t = self.target_ids();
        let mut input = vec![BOS];
        input.extend_from_slice(&t);
        let mut output = t;
        output.push(EOS);
        (input, output)
    }
}

/// Arithmetic on two integers written in the format `x=A,y=B,x?y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArithmeticConfig {
    pub n: usize,
    /// Operand magnitudes have between `min_digits` and `max_digits` digits.
    pub min_digits: u32,
    pub max_digits: u32,
    pub ops: Vec<ArithOp>,
    /// Operands are negated with probability one half.
    pub allow_negative: bool,
    pub seed: u64,
}

impl Default for ArithmeticConfig {
    fn default() -> Self {
        ArithmeticConfig {
            n: 5000,
            min_digits: 2,
            max_digits: 2,
            ops: vec![ArithOp::Add],
            allow_negative: false,
            seed: 1,
        }
    }
}

/// Builds the source string for operands and operator.
pub fn format_source(x: i64, y: i64, op: ArithOp) -> String {
    format!("x={x},y={y},x{}y", op.symbol())
}

impl ArithmeticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_digits == 0 || self.min_digits > self.max_digits || self.max_digits > 18 {
            return Err(Error::config(
                "digits",
                format!(
                    "need 1 <= min_digits <= max_digits <= 18, got {}..{}",
                    self.min_digits, self.max_digits
                ),
            ));
        }
        if self.ops.is_empty() {
            return Err(Error::config("ops", "at least one operator is required"));
        }
        Ok(())
    }

    fn operand(&self, rng: &mut SplitMix) -> i64 {
        let digits =
            self.min_digits + rng.below((self.max_digits - self.min_digits + 1) as u64) as u32;
        let lo = if digits == 1 {
            0
        } else {
            10i64.pow(digits - 1)
        };
        let hi = 10i64.pow(digits) - 1;
        let v = rng.range_i64(lo, hi);
        if self.allow_negative && rng.coin() {
            -v
        } else {
            v
        }
    }

    pub fn generate(&self) -> Result<Vec<TransductionExample>> {
        self.validate()?;
        let mut rng = SplitMix::new(self.seed);
        Ok((0..self.n)
            .map(|_| {
                let op = self.ops[rng.below(self.ops.len() as u64) as usize];
                let (x, y) = (self.operand(&mut rng), self.operand(&mut rng));
                TransductionExample {
                    source: format_source(x, y, op),
                    target: op.apply(x as i128, y as i128).to_string(),
                }
            })
            .collect())
    }

    /// Longest source plus the longest possible target, both in characters.
    pub fn max_lengths(&self) -> (usize, usize) {
        let operand = self.max_digits as usize + usize::from(self.allow_negative);
        let source = 2 * operand + "x=,y=,x?y".len();
        let product = self.ops.contains(&ArithOp::Mul);
        let target = if product {
            2 * self.max_digits as usize + 1
        } else {
            self.max_digits as usize + 2
        };
        (source, target)
    }
}

/// One `source<TAB>target` line per example.
pub fn to_tsv(examples: &[TransductionExample]) -> String {
    examples
        .iter()
        .map(|e| format!("{}\t{}\n", e.source, e.target))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_format() {
        let e = TransductionExample {
            source: format_source(85, -523, ArithOp::Mul),
            target: ArithOp::Mul.apply(85, -523).to_string(),
        };
        assert_eq!(e.source, "x=85,y=-523,x*y");
        assert_eq!(e.target, "-44455");
        assert_eq!(format_source(0, 0, ArithOp::Add), "x=0,y=0,x+y");
        assert_eq!(ArithOp::Add.apply(0, 0), 0);
    }

    #[test]
    fn charset_round_trip() {
        let ids = Charset::encode("x=85,y=-523,x*y").unwrap();
        assert!(ids.iter().all(|&i| (3..Charset::size()).contains(&i)));
        assert_eq!(Charset::decode(&ids), "x=85,y=-523,x*y");
        assert_eq!(Charset::size(), 21);
        assert!(Charset::encode("x/y").is_err());
    }

    #[test]
    fn addition_smoke_config() {
        let data = ArithmeticConfig::default().generate().unwrap();
        assert_eq!(data.len(), 5000);
        let (ls, lt) = ArithmeticConfig::default().max_lengths();
        for e in &data {
            assert!(e.source.len() == 13 && e.source.ends_with("x+y"));
            assert!(e.source.len() <= ls && e.target.len() <= lt);
            assert!(!e.target.starts_with('-'));
        }
        assert_eq!(data, ArithmeticConfig::default().generate().unwrap());
    }

    #[test]
    fn ops_parsing() {
        assert_eq!(
            ArithOp::parse_list("+-*").unwrap(),
            vec![ArithOp::Add, ArithOp::Sub, ArithOp::Mul]
        );
        assert_eq!(
            ArithOp::parse_list("+, *").unwrap(),
            vec![ArithOp::Add, ArithOp::Mul]
        );
        assert!(ArithOp::parse_list("/").is_err());
        assert!(ArithOp::parse_list("").is_err());
    }

    #[test]
    fn teacher_forcing_shift() {
        let e = TransductionExample {
            source: "x=1,y=2,x+y".into(),
            target: "3".into(),
        };
        let (i, o) = e.teacher_forcing();
        assert_eq!(i, vec![BOS, Charset::encode("3").unwrap()[0]]);
        assert_eq!(o, vec![Charset::encode("3").unwrap()[0], EOS]);
    }
}

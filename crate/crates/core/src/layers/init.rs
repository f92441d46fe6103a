//! Weight initialization.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::Serialize;

use crate::error::Error;
use crate::quaternion::Quaternion;
use crate::rng::SplitMix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Each of the four component matrices drawn independently from the
    /// uniform Glorot range.
    #[default]
    GlorotPerComponent,
    /// `w = |w|(cos θ + u sin θ)` with `θ ~ U[−π, π]`, `u` a unit pure
    /// quaternion from `U[0, 1]³` normalized, and `|w| ~ U[0, glorot bound]`.
    QuaternionPolar,
}

impl FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "glorot" | "glorot-per-component" => Ok(InitScheme::GlorotPerComponent),
            "polar" | "quaternion-polar" => Ok(InitScheme::QuaternionPolar),
            other => Err(Error::config("init", format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(scheme: InitScheme, seed: u64) -> Self {
        InitSpec { scheme, seed }
    }

    pub fn glorot(seed: u64) -> Self {
        InitSpec {
            scheme: InitScheme::GlorotPerComponent,
            seed,
        }
    }

    pub fn initializer(&self) -> Initializer {
        Initializer {
            scheme: self.scheme,
            rng: SplitMix::new(self.seed),
        }
    }
}

/// Stateful source of initial values; layers draw from it in construction
/// order, so a model built twice from the same spec is bit-identical.
#[derive(Debug, Clone)]
pub struct Initializer {
    pub scheme: InitScheme,
    rng: SplitMix,
}

/// `sqrt(6 / (fan_in + fan_out))`, the uniform Glorot bound.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// One polar sample: returns the quaternion together with `θ` and `|w|`.
pub fn polar_sample(rng: &mut SplitMix, bound: f64) -> (Quaternion, f64, f64) {
    let theta = rng.uniform(-PI, PI);
    let modulus = rng.uniform(0.0, bound);
    let (ux, uy, uz) = loop {
        let u = (rng.next_f64(), rng.next_f64(), rng.next_f64());
        if u.0 + u.1 + u.2 > 0.0 {
            break u;
        }
    };
    let n = (ux * ux + uy * uy + uz * uz).sqrt();
    let s = modulus * theta.sin() / n;
    let q = Quaternion::new(modulus * theta.cos(), s * ux, s * uy, s * uz);
    (q, theta, modulus)
}

impl Initializer {
    pub fn new(spec: InitSpec) -> Self {
        spec.initializer()
    }

    pub fn rng(&mut self) -> &mut SplitMix {
        &mut self.rng
    }

    /// Quaternion weight blocks `[4, out_q, in_q]`. Glorot fans use the real
    /// widths `4·in_q` and `4·out_q`.
    pub fn quaternion_weight(&mut self, out_q: usize, in_q: usize) -> Tensor {
        let bound = glorot_bound(4 * in_q, 4 * out_q);
        let block = out_q * in_q;
        let mut data = vec![0.0; 4 * block];
        match self.scheme {
            InitScheme::GlorotPerComponent => {
                for v in &mut data {
                    *v = self.rng.uniform(-bound, bound);
                }
            }
            InitScheme::QuaternionPolar => {
                for e in 0..block {
                    let (q, _, _) = polar_sample(&mut self.rng, bound);
                    for c in 0..4 {
                        data[c * block + e] = q.component(c);
                    }
                }
            }
        }
        Tensor::new(vec![4, out_q, in_q], data).expect("weight shape")
    }

    /// Real weight `[out, in]` with the uniform Glorot range.
    pub fn real_weight(&mut self, out: usize, inp: usize) -> Tensor {
        let bound = glorot_bound(inp, out);
        let data = (0..out * inp)
            .map(|_| self.rng.uniform(-bound, bound))
            .collect();
        Tensor::matrix(out, inp, data).expect("weight shape")
    }

    /// Embedding table `[rows, width]` from `U[−√(3/width), √(3/width)]`,
    /// giving rows of roughly unit norm.
    pub fn embedding(&mut self, rows: usize, width: usize) -> Tensor {
        let bound = (3.0 / width as f64).sqrt();
        let data = (0..rows * width)
            .map(|_| self.rng.uniform(-bound, bound))
            .collect();
        Tensor::matrix(rows, width, data).expect("embedding shape")
    }
}

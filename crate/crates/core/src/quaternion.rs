//! Scalar quaternion algebra.
//!
//! A quaternion `r + x·i + y·j + z·k` is stored as four `f64` components in
//! the fixed order `[r, x, y, z]`. The basis is implicit in the position.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Component index of the real part.
pub const R: usize = 0;
/// Component index of the `i` coefficient.
pub const X: usize = 1;
/// Component index of the `j` coefficient.
pub const Y: usize = 2;
/// Component index of the `k` coefficient.
pub const Z: usize = 3;

/// One signed term `sign · a[lhs] · b[rhs]` contributing to an output
/// component of the Hamilton product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HamiltonTerm {
    pub lhs: usize,
    pub rhs: usize,
    pub negate: bool,
}

const fn term(lhs: usize, rhs: usize, negate: bool) -> HamiltonTerm {
    HamiltonTerm { lhs, rhs, negate }
}

/// Expansion of `a ⊗ b`: `HAMILTON_TERMS[c]` lists the four terms of output
/// component `c`, in evaluation order.
///
/// Every tensor-level kernel in this crate (the structured linear layer, the
/// cross-score product, element-wise products) is generated from this table,
/// so the algebra is written down exactly once.
pub const HAMILTON_TERMS: [[HamiltonTerm; 4]; 4] = [
    [
        term(R, R, false),
        term(X, X, true),
        term(Y, Y, true),
        term(Z, Z, true),
    ],
    [
        term(X, R, false),
        term(R, X, false),
        term(Z, Y, true),
        term(Y, Z, false),
    ],
    [
        term(Y, R, false),
        term(Z, X, false),
        term(R, Y, false),
        term(X, Z, true),
    ],
    [
        term(Z, R, false),
        term(Y, X, true),
        term(X, Y, false),
        term(R, Z, false),
    ],
];

/// A quaternion with finite components.
#[derive(Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    c: [f64; 4],
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion { c: [0.0; 4] };
    pub const ONE: Quaternion = Quaternion {
        c: [1.0, 0.0, 0.0, 0.0],
    };
    pub const I: Quaternion = Quaternion {
        c: [0.0, 1.0, 0.0, 0.0],
    };
    pub const J: Quaternion = Quaternion {
        c: [0.0, 0.0, 1.0, 0.0],
    };
    pub const K: Quaternion = Quaternion {
        c: [0.0, 0.0, 0.0, 1.0],
    };

    /// Builds a quaternion, panicking on a non-finite component.
    ///
    /// Use [`Quaternion::try_new`] when the components come from untrusted data.
    pub fn new(r: f64, x: f64, y: f64, z: f64) -> Self {
        match Self::try_new(r, x, y, z) {
            Ok(q) => q,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn try_new(r: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let c = [r, x, y, z];
        if c.iter().all(|v| v.is_finite()) {
            Ok(Quaternion { c })
        } else {
            Err(Error::Domain(format!(
                "non-finite quaternion component in {c:?}"
            )))
        }
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Self::try_new(c[0], c[1], c[2], c[3])
    }

    pub fn r(&self) -> f64 {
        self.c[R]
    }

    pub fn x(&self) -> f64 {
        self.c[X]
    }

    pub fn y(&self) -> f64 {
        self.c[Y]
    }

    pub fn z(&self) -> f64 {
        self.c[Z]
    }

    pub fn to_array(self) -> [f64; 4] {
        self.c
    }

    /// Component `idx` in `[r, x, y, z]` order.
    pub fn component(&self, idx: usize) -> f64 {
        self.c[idx]
    }

    pub fn scale(self, alpha: f64) -> Quaternion {
        let a = self.c;
        Quaternion {
            c: [alpha * a[0], alpha * a[1], alpha * a[2], alpha * a[3]],
        }
    }

    pub fn conjugate(self) -> Quaternion {
        let a = self.c;
        Quaternion {
            c: [a[0], -a[1], -a[2], -a[3]],
        }
    }

    pub fn norm_squared(&self) -> f64 {
        let a = self.c;
        a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `q / |q|`. The zero quaternion has no direction and is rejected.
    pub fn unit(self) -> Result<Quaternion> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Domain("cannot normalize the zero quaternion".into()));
        }
        let a = self.c;
        Ok(Quaternion {
            c: [a[0] / n, a[1] / n, a[2] / n, a[3] / n],
        })
    }

    /// The Hamilton product `self ⊗ other`.
    ///
    /// Each output component is summed left to right in the order listed by
    /// [`HAMILTON_TERMS`], which is also the row order of the structured 4×4
    /// matrix form. Both routes therefore agree bit for bit.
    pub fn hamilton(self, other: Quaternion) -> Quaternion {
        let (q, p) = (self.c, other.c);
        Quaternion {
            c: [
                q[R] * p[R] - q[X] * p[X] - q[Y] * p[Y] - q[Z] * p[Z],
                q[X] * p[R] + q[R] * p[X] - q[Z] * p[Y] + q[Y] * p[Z],
                q[Y] * p[R] + q[Z] * p[X] + q[R] * p[Y] - q[X] * p[Z],
                q[Z] * p[R] - q[Y] * p[X] + q[X] * p[Y] + q[R] * p[Z],
            ],
        }
    }
}

impl fmt::Debug for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, x, y, z] = self.c;
        write!(f, "({r}, {x}i, {y}j, {z}k)")
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Quaternion) -> Quaternion {
        let (a, b) = (self.c, rhs.c);
        Quaternion {
            c: [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]],
        }
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, rhs: Quaternion) -> Quaternion {
        let (a, b) = (self.c, rhs.c);
        Quaternion {
            c: [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]],
        }
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// `a * b` is the Hamilton product.
impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        self.hamilton(rhs)
    }
}

impl Mul<Quaternion> for f64 {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        rhs.scale(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix;

    fn q(r: f64, x: f64, y: f64, z: f64) -> Quaternion {
        Quaternion::new(r, x, y, z)
    }

    fn random_q(rng: &mut SplitMix) -> Quaternion {
        q(
            rng.uniform(-2.0, 2.0),
            rng.uniform(-2.0, 2.0),
            rng.uniform(-2.0, 2.0),
            rng.uniform(-2.0, 2.0),
        )
    }

    #[test]
    fn addition() {
        assert_eq!(q(1., 2., 3., 4.) + Quaternion::ZERO, q(1., 2., 3., 4.));
        assert_eq!(q(1., 2., 3., 4.) + q(4., 3., 2., 1.), q(5., 5., 5., 5.));
        assert_eq!(q(1., 2., 3., 4.) - q(4., 3., 2., 1.), q(-3., -1., 1., 3.));

        let mut rng = SplitMix::new(11);
        for _ in 0..100 {
            let (a, b) = (random_q(&mut rng), random_q(&mut rng));
            assert_eq!(a + b, b + a);
        }
    }

    #[test]
    fn scaling() {
        assert_eq!(0.0 * q(1., 2., 3., 4.), Quaternion::ZERO);
        assert_eq!(q(1., 2., 3., 4.).scale(1.0), q(1., 2., 3., 4.));
        assert_eq!(q(1., -1., 0.5, 0.).scale(2.0), q(2., -2., 1., 0.));
    }

    #[test]
    fn conjugate() {
        let a = q(1., 2., 3., 4.);
        assert_eq!(a.conjugate(), q(1., -2., -3., -4.));
        assert_eq!(a.conjugate().conjugate(), a);
        let n = a.hamilton(a.conjugate());
        assert_eq!(n, q(30., 0., 0., 0.));
    }

    #[test]
    fn unit() {
        assert_eq!(q(0., 3., 0., 4.).unit().unwrap(), q(0., 0.6, 0., 0.8));
        assert_eq!(Quaternion::ONE.unit().unwrap(), Quaternion::ONE);
        assert!(matches!(Quaternion::ZERO.unit(), Err(Error::Domain(_))));
    }

    #[test]
    fn constructor_rejects_non_finite() {
        assert!(Quaternion::try_new(f64::NAN, 0., 0., 0.).is_err());
        assert!(Quaternion::try_new(0., f64::INFINITY, 0., 0.).is_err());
        assert!(Quaternion::from_array([0.0, 0.0, 0.0, 1.0]).is_ok());
    }

    #[test]
    fn basis_products() {
        let (i, j, k) = (Quaternion::I, Quaternion::J, Quaternion::K);
        let minus_one = q(-1., 0., 0., 0.);
        assert_eq!(i * j, k);
        assert_eq!(j * k, i);
        assert_eq!(k * i, j);
        assert_eq!(j * i, -k);
        assert_eq!(k * j, -i);
        assert_eq!(i * k, -j);
        assert_eq!(i * i, minus_one);
        assert_eq!(j * j, minus_one);
        assert_eq!(k * k, minus_one);
        assert_eq!(i * j * k, minus_one);
        assert_eq!(Quaternion::ONE * q(1., 2., 3., 4.), q(1., 2., 3., 4.));
    }

    #[test]
    fn terms_table_matches_product() {
        let mut rng = SplitMix::new(5);
        for _ in 0..50 {
            let (a, b) = (random_q(&mut rng), random_q(&mut rng));
            let direct = a.hamilton(b).to_array();
            for (c, terms) in HAMILTON_TERMS.iter().enumerate() {
                let mut acc = 0.0;
                for (n, t) in terms.iter().enumerate() {
                    let v = a.component(t.lhs) * b.component(t.rhs);
                    let v = if t.negate { -v } else { v };
                    acc = if n == 0 { v } else { acc + v };
                }
                assert_eq!(acc, direct[c]);
            }
        }
    }
}

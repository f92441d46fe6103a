//! Quaternion arrays stored component-major: four real arrays of one shape.

use crate::error::{Error, Result};
use crate::quaternion::{Quaternion, HAMILTON_TERMS};

#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    shape: Vec<usize>,
    comps: [Vec<f64>; 4],
}

impl QTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        QTensor {
            shape: shape.to_vec(),
            comps: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    pub fn from_components(shape: &[usize], comps: [Vec<f64>; 4]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if let Some(bad) = comps.iter().find(|c| c.len() != n) {
            return Err(Error::shape(format!(
                "component of length {} does not fit shape {shape:?}",
                bad.len()
            )));
        }
        Ok(QTensor {
            shape: shape.to_vec(),
            comps,
        })
    }

    pub fn from_quaternions(shape: &[usize], values: &[Quaternion]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::shape(format!(
                "{} quaternions for shape {shape:?}",
                values.len()
            )));
        }
        let comps = std::array::from_fn(|c| values.iter().map(|q| q.component(c)).collect());
        Ok(QTensor {
            shape: shape.to_vec(),
            comps,
        })
    }

    /// Square matrix with `Quaternion::ONE` on the diagonal.
    pub fn identity(n: usize) -> Self {
        let mut out = QTensor::zeros(&[n, n]);
        for i in 0..n {
            out.comps[0][i * n + i] = 1.0;
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn components(&self) -> &[Vec<f64>; 4] {
        &self.comps
    }

    pub fn into_components(self) -> [Vec<f64>; 4] {
        self.comps
    }

    /// The element at flat (row-major) index `idx`.
    pub fn get(&self, idx: usize) -> Quaternion {
        Quaternion::new(
            self.comps[0][idx],
            self.comps[1][idx],
            self.comps[2][idx],
            self.comps[3][idx],
        )
    }

    pub fn get2(&self, row: usize, col: usize) -> Quaternion {
        let (_, c) = self.dims2();
        self.get(row * c + col)
    }

    pub fn to_quaternions(&self) -> Vec<Quaternion> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    /// Same elements under a new shape of equal element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<QTensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [lead @ .., c] => (lead.iter().product(), *c),
        }
    }

    fn zip(&self, other: &QTensor, f: impl Fn(f64, f64) -> f64) -> Result<QTensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let comps = std::array::from_fn(|c| {
            self.comps[c]
                .iter()
                .zip(&other.comps[c])
                .map(|(&a, &b)| f(a, b))
                .collect()
        });
        Ok(QTensor {
            shape: self.shape.clone(),
            comps,
        })
    }

    pub fn add(&self, other: &QTensor) -> Result<QTensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &QTensor) -> Result<QTensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> QTensor {
        self.map(|v| alpha * v)
    }

    /// Applies `f` to every component of every element independently.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> QTensor {
        let comps = std::array::from_fn(|c| self.comps[c].iter().map(|&v| f(v)).collect());
        QTensor {
            shape: self.shape.clone(),
            comps,
        }
    }

    /// Element-wise Hamilton product of two same-shape tensors.
    pub fn hamilton_elementwise(&self, other: &QTensor) -> Result<QTensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let values: Vec<Quaternion> = (0..self.len())
            .map(|i| self.get(i).hamilton(other.get(i)))
            .collect();
        QTensor::from_quaternions(&self.shape, &values)
    }

    /// Matrix transpose applied to every component.
    pub fn transpose(&self) -> QTensor {
        let (r, c) = self.dims2();
        let comps = std::array::from_fn(|k| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = self.comps[k][i * c + j];
                }
            }
            out
        });
        QTensor {
            shape: vec![c, r],
            comps,
        }
    }

    /// `out[i, j] = Σ_t self[i, t] ⊗ rhs[t, j]`, accumulated over ascending `t`.
    pub fn hamilton_matmul(&self, rhs: &QTensor) -> Result<QTensor> {
        let (m, k) = self.dims2();
        let (k2, n) = rhs.dims2();
        if self.shape.len() != 2 || rhs.shape.len() != 2 || k != k2 {
            return Err(Error::shape(format!(
                "hamilton matmul {:?} by {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; m * n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = [0.0f64; 4];
                for t in 0..k {
                    let a = i * k + t;
                    let b = t * n + j;
                    for (c, terms) in HAMILTON_TERMS.iter().enumerate() {
                        let mut s = 0.0;
                        for (idx, term) in terms.iter().enumerate() {
                            let v = self.comps[term.lhs][a] * rhs.comps[term.rhs][b];
                            s = match (idx, term.negate) {
                                (0, _) => v,
                                (_, true) => s - v,
                                (_, false) => s + v,
                            };
                        }
                        acc[c] += s;
                    }
                }
                for c in 0..4 {
                    out[c][i * n + j] = acc[c];
                }
            }
        }
        Ok(QTensor {
            shape: vec![m, n],
            comps: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix;

    fn random(shape: &[usize], rng: &mut SplitMix) -> QTensor {
        let n: usize = shape.iter().product();
        let comps = std::array::from_fn(|_| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect());
        QTensor::from_components(shape, comps).unwrap()
    }

    #[test]
    fn one_by_one_matmul_is_hamilton() {
        let a = QTensor::from_quaternions(&[1, 1], &[Quaternion::new(1., 2., 3., 4.)]).unwrap();
        let b = QTensor::from_quaternions(&[1, 1], &[Quaternion::new(-1., 0.5, 2., 1.)]).unwrap();
        let out = a.hamilton_matmul(&b).unwrap();
        assert_eq!(
            out.get(0),
            Quaternion::new(1., 2., 3., 4.) * Quaternion::new(-1., 0.5, 2., 1.)
        );
    }

    #[test]
    fn identity_matmul() {
        let mut rng = SplitMix::new(1);
        let b = random(&[3, 4], &mut rng);
        assert_eq!(QTensor::identity(3).hamilton_matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_matches_scalar_loop() {
        let mut rng = SplitMix::new(2);
        let a = random(&[3, 2], &mut rng);
        let b = random(&[2, 4], &mut rng);
        let out = a.hamilton_matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut acc = Quaternion::ZERO;
                for t in 0..2 {
                    acc = acc + a.get2(i, t) * b.get2(t, j);
                }
                let got = out.get2(i, j);
                for c in 0..4 {
                    assert!((got.component(c) - acc.component(c)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn matmul_shape_errors() {
        let a = QTensor::zeros(&[2, 3]);
        let b = QTensor::zeros(&[2, 3]);
        assert!(matches!(a.hamilton_matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn empty_extents() {
        let a = QTensor::zeros(&[0, 3]);
        let b = QTensor::zeros(&[3, 2]);
        let out = a.hamilton_matmul(&b).unwrap();
        assert_eq!(out.shape(), &[0, 2]);
        assert!(out.is_empty());
        let a = QTensor::zeros(&[2, 0]);
        let b = QTensor::zeros(&[0, 2]);
        assert_eq!(a.hamilton_matmul(&b).unwrap(), QTensor::zeros(&[2, 2]));
    }

    #[test]
    fn componentwise_ops_match_real_ops() {
        let mut rng = SplitMix::new(3);
        let a = random(&[2, 3], &mut rng);
        let b = random(&[2, 3], &mut rng);
        let sum = a.add(&b).unwrap();
        let scaled = a.scale(-1.5);
        let act = a.map(f64::tanh);
        for c in 0..4 {
            for i in 0..6 {
                assert_eq!(sum.component(c)[i], a.component(c)[i] + b.component(c)[i]);
                assert_eq!(scaled.component(c)[i], -1.5 * a.component(c)[i]);
                assert_eq!(act.component(c)[i], a.component(c)[i].tanh());
            }
        }
    }

    #[test]
    fn component_length_checked() {
        let comps = [vec![0.0; 4], vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]];
        assert!(QTensor::from_components(&[2, 2], comps).is_err());
    }
}

use super::bridge::quaternion_to_real;
use super::init::Initializer;
use super::linear::Linear;
use super::params::{Binding, ParamRole, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::qtensor::QTensor;

/// Real classifier over the concatenated components `[r; x; y; z]` of a
/// quaternion vector of width `d`.
#[derive(Debug, Clone)]
pub struct OutputHead {
    pub d: usize,
    pub num_classes: usize,
    pub linear: Linear,
}

impl OutputHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        num_classes: usize,
        init: &mut Initializer,
    ) -> Self {
        let linear = Linear::new(store, name, 4 * d, num_classes, true, ParamRole::Head, init);
        OutputHead {
            d,
            num_classes,
            linear,
        }
    }

    /// `x` is `n × 4·d`; returns `n × num_classes` logits.
    pub fn logits(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        let (_, width) = tape.value(x).dims2();
        if width != 4 * self.d {
            return Err(Error::shape(format!(
                "head expects width {}, got {width}",
                4 * self.d
            )));
        }
        self.linear.forward(tape, params, x)
    }

    /// Logits and mean cross-entropy against `targets`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        params: &Binding,
        x: Var,
        targets: &[usize],
    ) -> Result<(Var, Var)> {
        let logits = self.logits(tape, params, x)?;
        let t: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
        let loss = tape.cross_entropy(logits, &t)?;
        Ok((logits, loss))
    }

    /// Logits for one quaternion vector `q: [d]` and, when a target is
    /// given, its cross-entropy.
    pub fn classify(
        &self,
        store: &ParamStore,
        q: &QTensor,
        target: Option<usize>,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        if q.len() != self.d {
            return Err(Error::shape(format!(
                "head expects {} quaternions, got {}",
                self.d,
                q.len()
            )));
        }
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let x = tape.constant(quaternion_to_real(&q.clone().reshaped(&[1, self.d])?)?);
        let logits = self.logits(&mut tape, &params, x)?;
        let loss = match target {
            Some(t) => {
                let l = tape.cross_entropy(logits, &[Some(t)])?;
                Some(tape.value(l).data()[0])
            }
            None => None,
        };
        Ok((tape.value(logits).data().to_vec(), loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init::InitSpec;
    use crate::quaternion::Quaternion;
    use crate::tensor::Tensor;

    fn head(classes: usize, d: usize) -> (ParamStore, OutputHead) {
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(11).initializer();
        let h = OutputHead::new(&mut store, "head", d, classes, &mut init);
        (store, h)
    }

    fn q2() -> QTensor {
        QTensor::from_quaternions(
            &[2],
            &[
                Quaternion::new(0.5, -1., 2., 0.25),
                Quaternion::new(1., 0., -0.5, 3.),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let (mut store, h) = head(5, 2);
        *store.value_mut(h.linear.weight) = Tensor::zeros(&[5, 8]);
        let (logits, loss) = h.classify(&store, &q2(), Some(3)).unwrap();
        assert!(logits.iter().all(|v| *v == 0.0));
        assert!((loss.unwrap() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hot_head_selects_component() {
        let (mut store, h) = head(2, 2);
        // logit 0 reads y of the second quaternion: column 2·d + 1
        let mut w = Tensor::zeros(&[2, 8]);
        w.data_mut()[5] = 1.0;
        *store.value_mut(h.linear.weight) = w;
        let (logits, _) = h.classify(&store, &q2(), None).unwrap();
        assert_eq!(logits, vec![-0.5, 0.0]);
    }

    #[test]
    fn three_class_loss_matches_scalar_reference() {
        let (store, h) = head(3, 2);
        let (logits, loss) = h.classify(&store, &q2(), Some(1)).unwrap();
        let w = store.value(h.linear.weight);
        let b = store.value(h.linear.bias.unwrap());
        let x = [0.5, 1., -1., 0., 2., -0.5, 0.25, 3.];
        let mut z = [0.0; 3];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = b.data()[c] + (0..8).map(|j| w.at(c, j) * x[j]).sum::<f64>();
            assert!((logits[c] - *zc).abs() < 1e-12);
        }
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let reference = -(z[1].exp() / denom).ln();
        assert!((loss.unwrap() - reference).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch() {
        let (store, h) = head(3, 2);
        assert!(matches!(
            h.classify(&store, &QTensor::zeros(&[3]), None),
            Err(Error::Shape(_))
        ));
    }
}

use super::bridge::{quaternion_to_real, real_to_quaternion};
use super::init::Initializer;
use super::params::{Binding, ParamId, ParamRole, ParamStore};
use super::ActivationKind;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::qtensor::QTensor;
use crate::quaternion::Quaternion;
use crate::tensor::Tensor;

/// Real 4×4 matrix `M(W)` such that `M(W)·[r, x, y, z]ᵀ = W ⊗ Q`.
///
/// ```text
/// | W_r  -W_x  -W_y  -W_z |
/// | W_x   W_r  -W_z   W_y |
/// | W_y   W_z   W_r  -W_x |
/// | W_z  -W_y   W_x   W_r |
/// ```
pub fn hamilton_matrix_form(w: Quaternion) -> [[f64; 4]; 4] {
    let [r, x, y, z] = w.to_array();
    [[r, -x, -y, -z], [x, r, -z, y], [y, z, r, -x], [z, -y, x, r]]
}

/// `m · v`, each row summed left to right.
pub fn matvec4(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2] + m[i][3] * v[3])
}

/// Quaternion feed-forward layer: `out[o] = Σ_t W[o, t] ⊗ x[t] (+ bias[o])`.
///
/// The weight holds `4·in_q·out_q` real scalars, a quarter of the
/// `16·in_q·out_q` of a real dense layer between the same real widths.
#[derive(Debug, Clone)]
pub struct QLinear {
    pub in_q: usize,
    pub out_q: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl QLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_q: usize,
        out_q: usize,
        bias: bool,
        init: &mut Initializer,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::Transform,
            init.quaternion_weight(out_q, in_q),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                ParamRole::Bias,
                Tensor::zeros(&[4 * out_q]),
            )
        });
        QLinear {
            in_q,
            out_q,
            weight,
            bias,
        }
    }

    /// Trainable weight scalars (bias excluded).
    pub fn weight_count(&self) -> usize {
        4 * self.in_q * self.out_q
    }

    pub fn param_count(&self) -> usize {
        self.weight_count()
            + if self.bias.is_some() {
                4 * self.out_q
            } else {
                0
            }
    }

    /// Weight scalars of a real dense layer `4·in_q → 4·out_q`.
    pub fn real_equivalent_weight_count(&self) -> usize {
        16 * self.in_q * self.out_q
    }

    /// Linear part plus bias on the tape; `x` is `n × 4·in_q`.
    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        let y = tape.hamilton_linear(x, params.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add_row(y, params.var(b)),
            None => Ok(y),
        }
    }

    /// Linear map followed by a component-wise activation.
    pub fn forward_act(
        &self,
        tape: &mut Tape,
        params: &Binding,
        x: Var,
        act: ActivationKind,
    ) -> Result<Var> {
        let y = self.forward(tape, params, x)?;
        act.apply(tape, y)
    }

    /// The quaternion weight as a `[out_q, in_q]` quaternion matrix.
    pub fn weight_qtensor(&self, store: &ParamStore) -> QTensor {
        let w = store.value(self.weight).data();
        let block = self.out_q * self.in_q;
        let comps = std::array::from_fn(|c| w[c * block..(c + 1) * block].to_vec());
        QTensor::from_components(&[self.out_q, self.in_q], comps).expect("weight layout")
    }

    pub fn set_weight(&self, store: &mut ParamStore, w: &QTensor) -> Result<()> {
        if w.shape() != [self.out_q, self.in_q] {
            return Err(Error::shape(format!(
                "weight {:?} for layer {}x{}",
                w.shape(),
                self.out_q,
                self.in_q
            )));
        }
        let data: Vec<f64> = w.components().iter().flatten().copied().collect();
        *store.value_mut(self.weight) = Tensor::new(vec![4, self.out_q, self.in_q], data)?;
        Ok(())
    }
}

/// Quaternion feed-forward on a quaternion matrix `x: [n × in_q]`.
pub fn qffn_forward(
    layer: &QLinear,
    store: &ParamStore,
    act: ActivationKind,
    x: &QTensor,
) -> Result<QTensor> {
    let (_, width) = x.dims2();
    if x.shape().len() != 2 || width != layer.in_q {
        return Err(Error::shape(format!(
            "input {:?} for a layer of width {}",
            x.shape(),
            layer.in_q
        )));
    }
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let xv = tape.constant(quaternion_to_real(x)?);
    let y = layer.forward_act(&mut tape, &params, xv, act)?;
    real_to_quaternion(tape.value(y))
}

/// Real dense layer `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        bias: bool,
        role: ParamRole,
        init: &mut Initializer,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), role, init.real_weight(out, inp));
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                ParamRole::Bias,
                Tensor::zeros(&[out]),
            )
        });
        Linear {
            inp,
            out,
            weight,
            bias,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.inp * self.out
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul_nt(x, params.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add_row(y, params.var(b)),
            None => Ok(y),
        }
    }
}

/// A transform that is either quaternion or real; both map real widths
/// `4·in_q → 4·out_q` on the tape.
#[derive(Debug, Clone)]
pub enum Dense {
    Quaternion(QLinear),
    Real(Linear),
}

impl Dense {
    /// `quaternion` selects the Hamilton layer; widths are quaternion units.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_q: usize,
        out_q: usize,
        bias: bool,
        quaternion: bool,
        init: &mut Initializer,
    ) -> Self {
        if quaternion {
            Dense::Quaternion(QLinear::new(store, name, in_q, out_q, bias, init))
        } else {
            Dense::Real(Linear::new(
                store,
                name,
                4 * in_q,
                4 * out_q,
                bias,
                ParamRole::Transform,
                init,
            ))
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        match self {
            Dense::Quaternion(l) => l.forward(tape, params, x),
            Dense::Real(l) => l.forward(tape, params, x),
        }
    }

    pub fn forward_act(
        &self,
        tape: &mut Tape,
        params: &Binding,
        x: Var,
        act: ActivationKind,
    ) -> Result<Var> {
        let y = self.forward(tape, params, x)?;
        act.apply(tape, y)
    }

    pub fn weight(&self) -> ParamId {
        match self {
            Dense::Quaternion(l) => l.weight,
            Dense::Real(l) => l.weight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init::InitSpec;
    use crate::rng::SplitMix;

    fn random_q(rng: &mut SplitMix) -> Quaternion {
        Quaternion::new(
            rng.uniform(-1., 1.),
            rng.uniform(-1., 1.),
            rng.uniform(-1., 1.),
            rng.uniform(-1., 1.),
        )
    }

    fn random_qt(shape: &[usize], rng: &mut SplitMix) -> QTensor {
        let n: usize = shape.iter().product();
        let v: Vec<Quaternion> = (0..n).map(|_| random_q(rng)).collect();
        QTensor::from_quaternions(shape, &v).unwrap()
    }

    #[test]
    fn matrix_form_of_identity_and_basis() {
        let m = hamilton_matrix_form(Quaternion::ONE);
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let ij = matvec4(
            &hamilton_matrix_form(Quaternion::I),
            Quaternion::J.to_array(),
        );
        assert_eq!(ij, Quaternion::K.to_array());
    }

    #[test]
    fn matrix_form_agrees_with_hamilton_bitwise() {
        let mut rng = SplitMix::new(21);
        for _ in 0..200 {
            let (w, q) = (random_q(&mut rng), random_q(&mut rng));
            assert_eq!(
                matvec4(&hamilton_matrix_form(w), q.to_array()),
                w.hamilton(q).to_array()
            );
        }
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(0).initializer();
        let layer = QLinear::new(&mut store, "l", 3, 3, false, &mut init);
        layer.set_weight(&mut store, &QTensor::identity(3)).unwrap();
        let mut rng = SplitMix::new(1);
        let x = random_qt(&[2, 3], &mut rng);
        assert_eq!(
            qffn_forward(&layer, &store, ActivationKind::Identity, &x).unwrap(),
            x
        );
    }

    #[test]
    fn zero_input_with_relu_is_zero() {
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(0).initializer();
        let layer = QLinear::new(&mut store, "l", 3, 2, true, &mut init);
        let out = qffn_forward(
            &layer,
            &store,
            ActivationKind::Relu,
            &QTensor::zeros(&[4, 3]),
        )
        .unwrap();
        assert_eq!(out, QTensor::zeros(&[4, 2]));
    }

    #[test]
    fn layer_matches_scalar_loop() {
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(5).initializer();
        let layer = QLinear::new(&mut store, "l", 3, 2, true, &mut init);
        let mut rng = SplitMix::new(6);
        let bias = random_qt(&[2], &mut rng);
        let bias_real: Vec<f64> = bias.components().iter().flatten().copied().collect();
        *store.value_mut(layer.bias.unwrap()) = Tensor::new(vec![8], bias_real).unwrap();
        let x = random_qt(&[2, 3], &mut rng);
        let out = qffn_forward(&layer, &store, ActivationKind::Tanh, &x).unwrap();
        let w = layer.weight_qtensor(&store);
        for i in 0..2 {
            for o in 0..2 {
                let mut acc = bias.get(o);
                for t in 0..3 {
                    acc = acc + w.get2(o, t) * x.get2(i, t);
                }
                let got = out.get2(i, o);
                for c in 0..4 {
                    assert!((got.component(c) - acc.component(c).tanh()).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn layer_equals_block_structured_dense_layer() {
        // Real dense layer assembled from per-weight 4×4 blocks.
        let (in_q, out_q) = (3, 2);
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(8).initializer();
        let layer = QLinear::new(&mut store, "l", in_q, out_q, false, &mut init);
        let w = layer.weight_qtensor(&store);
        let mut rng = SplitMix::new(9);
        let x = random_qt(&[4, in_q], &mut rng);
        let out = qffn_forward(&layer, &store, ActivationKind::Identity, &x).unwrap();
        for n in 0..4 {
            for o in 0..out_q {
                let mut acc = [0.0; 4];
                for t in 0..in_q {
                    let m = hamilton_matrix_form(w.get2(o, t));
                    let v = matvec4(&m, x.get2(n, t).to_array());
                    for c in 0..4 {
                        acc[c] += v[c];
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    assert!((out.get2(n, o).component(c) - a).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn parameter_counts() {
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(0).initializer();
        let big = QLinear::new(&mut store, "big", 64, 64, false, &mut init);
        assert_eq!(big.weight_count(), 16384);
        assert_eq!(big.real_equivalent_weight_count(), 65536);
        let small = QLinear::new(&mut store, "small", 1, 1, true, &mut init);
        assert_eq!(small.weight_count(), 4);
        assert_eq!(small.real_equivalent_weight_count(), 16);
        assert_eq!(small.param_count(), 8);
        assert_eq!(store.count().total(), 16384 + 8);
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let mut store = ParamStore::new();
        let mut init = InitSpec::glorot(0).initializer();
        let layer = QLinear::new(&mut store, "l", 3, 2, false, &mut init);
        let err = qffn_forward(
            &layer,
            &store,
            ActivationKind::Identity,
            &QTensor::zeros(&[2, 4]),
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}

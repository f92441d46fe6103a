use super::gradcheck::{check_gradients, FD_STEP, FD_TOLERANCE};
use super::*;
use crate::error::Error;
use crate::rng::SplitMix;
use crate::tensor::Tensor;

fn rand_tensor(shape: &[usize], rng: &mut SplitMix) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

/// Random projection to a scalar so that every output entry matters.
fn project(tape: &mut Tape, y: Var, seed: u64) -> crate::Result<Var> {
    let mut rng = SplitMix::new(seed);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(rand_tensor(&shape, &mut rng));
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

fn assert_fd<F>(leaves: &[Tensor], build: F)
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    let checks = check_gradients(leaves, FD_STEP, build).unwrap();
    for c in checks {
        assert!(
            c.passes(FD_TOLERANCE),
            "leaf {} rel error {}",
            c.index,
            c.rel_error
        );
    }
}

#[test]
fn recording_bookkeeping() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::scalar(1.0));
    assert!(tape.inputs(a).is_empty());
    let b = tape.param(Tensor::scalar(2.0));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.inputs(c), vec![a, b]);
    let d = tape.mul(c, c).unwrap();
    let _ = tape.tanh(d).unwrap();
    assert_eq!(tape.op_count(), 3);
    assert_eq!(tape.len(), 5);
    assert!(tape.is_param(b) && !tape.is_param(a));
}

#[test]
fn foreign_input_is_a_graph_error() {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let a = t1.constant(Tensor::scalar(1.0));
    let b = t2.constant(Tensor::scalar(1.0));
    assert!(matches!(t2.add(a, b), Err(Error::Graph(_))));
}

#[test]
fn linear_and_quadratic_losses() {
    let mut rng = SplitMix::new(1);
    let p0 = rand_tensor(&[3, 2], &mut rng);

    let mut tape = Tape::new();
    let p = tape.param(p0.clone());
    let loss = tape.sum_all(p).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(p).unwrap().data(), &[1.0; 6]);

    let mut tape = Tape::new();
    let p = tape.param(p0.clone());
    let sq = tape.mul(p, p).unwrap();
    let loss = tape.sum_all(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    let expect: Vec<f64> = p0.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.get(p).unwrap().data(), expect.as_slice());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::zeros(&[2, 2]));
    let y = tape.tanh(p).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn elementwise_primitives() {
    let mut rng = SplitMix::new(2);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3, 4], &mut rng);
    let row = rand_tensor(&[4], &mut rng);
    assert_fd(&[a.clone(), b.clone(), row], |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[1])?;
        let sc = t.scale(m, -0.7)?;
        let r = t.add_row(sc, v[2])?;
        let th = t.tanh(r)?;
        let re = t.relu(v[0])?;
        let both = t.add(th, re)?;
        project(t, both, 9)
    });
}

#[test]
fn matrix_primitives() {
    let mut rng = SplitMix::new(3);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[4, 2], &mut rng);
    let c = rand_tensor(&[5, 4], &mut rng);
    assert_fd(&[a, b, c], |t, v| {
        let ab = t.matmul(v[0], v[1])?;
        let ac = t.matmul_nt(v[0], v[2])?;
        let cat = t.concat(&[ab, ac], 1)?;
        let rows = t.concat(&[cat, cat], 0)?;
        let sl = t.slice_cols(rows, 1, 4)?;
        let sr = t.slice_rows(sl, 2, 3)?;
        let sum = t.sum_rows(sr)?;
        let sc = t.sum_cols(sr)?;
        let a1 = project(t, sum, 4)?;
        let a2 = project(t, sc, 5)?;
        t.add(a1, a2)
    });
}

#[test]
fn batched_products() {
    let mut rng = SplitMix::new(4);
    // two batches: 2×3 queries, 4×3 keys, 4×2 values
    let q = rand_tensor(&[4, 3], &mut rng);
    let k = rand_tensor(&[8, 3], &mut rng);
    let v = rand_tensor(&[8, 2], &mut rng);
    assert_fd(&[q, k, v], |t, x| {
        let s = t.batched_matmul_nt(x[0], x[1], 2)?;
        let w = t.softmax_rows(s, None)?;
        let o = t.batched_matmul(w, x[2], 2)?;
        project(t, o, 6)
    });
}

#[test]
fn batched_products_match_per_batch_products() {
    let mut rng = SplitMix::new(40);
    let q = rand_tensor(&[4, 3], &mut rng);
    let k = rand_tensor(&[6, 3], &mut rng);
    let mut t = Tape::new();
    let (qv, kv) = (t.constant(q.clone()), t.constant(k.clone()));
    let s = t.batched_matmul_nt(qv, kv, 2).unwrap();
    let s = t.value(s).clone();
    for b in 0..2 {
        let qb = Tensor::matrix(2, 3, q.data()[b * 6..(b + 1) * 6].to_vec()).unwrap();
        let kb = Tensor::matrix(3, 3, k.data()[b * 9..(b + 1) * 9].to_vec()).unwrap();
        let expect = crate::tensor::matmul(&qb, &kb.transpose2()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((s.at(b * 2 + i, j) - expect.at(i, j)).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn quaternion_primitives() {
    let mut rng = SplitMix::new(5);
    let a = rand_tensor(&[3, 8], &mut rng);
    let b = rand_tensor(&[2, 8], &mut rng);
    let c = rand_tensor(&[3, 8], &mut rng);
    assert_fd(&[a, b, c], |t, x| {
        let e = t.hamilton_scores(x[0], x[1], 1)?;
        let g = t.component_softmax(e, None)?;
        let al = t.component_product(g, x[1], 1, 4)?;
        let h = t.hamilton_elem(al, x[2])?;
        project(t, h, 7)
    });
}

#[test]
fn layer_norm_and_cross_entropy() {
    let mut rng = SplitMix::new(6);
    let x = rand_tensor(&[3, 5], &mut rng);
    let g = rand_tensor(&[5], &mut rng);
    let b = rand_tensor(&[5], &mut rng);
    assert_fd(&[x, g, b], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        t.cross_entropy(y, &[Some(1), None, Some(4)])
    });
}

#[test]
fn gather_rows_accumulates_repeats() {
    let mut rng = SplitMix::new(7);
    let table = rand_tensor(&[4, 3], &mut rng);
    assert_fd(std::slice::from_ref(&table), |t, v| {
        let e = t.gather_rows(v[0], &[2, 0, 2])?;
        project(t, e, 8)
    });
    let mut tape = Tape::new();
    let tv = tape.param(table);
    assert!(matches!(
        tape.gather_rows(tv, &[4]),
        Err(Error::Lookup { id: 4, len: 4 })
    ));
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let mut rng = SplitMix::new(8);
    let x = rand_tensor(&[3, 12], &mut rng);
    let mask = AttentionMask::causal(1, 3);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = tape.component_softmax(xv, Some(&mask)).unwrap();
    let yv = tape.value(y).clone();
    for i in 0..3 {
        for c in 0..4 {
            let row = &yv.row(i)[c * 3..(c + 1) * 3];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, w) in row.iter().enumerate() {
                if j > i {
                    assert_eq!(*w, 0.0);
                }
            }
        }
    }
    assert_fd(&[x], |t, v| {
        let y = t.component_softmax(v[0], Some(&mask))?;
        project(t, y, 10)
    });
}

#[test]
fn component_softmax_grad_is_four_row_softmax_grads() {
    let mut rng = SplitMix::new(9);
    let x = rand_tensor(&[2, 12], &mut rng);
    let up = rand_tensor(&[2, 12], &mut rng);

    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = tape.component_softmax(xv, None).unwrap();
    let w = tape.constant(up.clone());
    let p = tape.mul(y, w).unwrap();
    let loss = tape.sum_all(p).unwrap();
    let joint = tape.backward(loss).unwrap().get(xv).unwrap().clone();

    for c in 0..4 {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let part = tape.slice_cols(xv, c * 3, 3).unwrap();
        let y = tape.softmax_rows(part, None).unwrap();
        let uv = tape.constant(up.clone());
        let u = tape.slice_cols(uv, c * 3, 3).unwrap();
        let p = tape.mul(y, u).unwrap();
        let loss = tape.sum_all(p).unwrap();
        let g = tape.backward(loss).unwrap().get(xv).unwrap().clone();
        for i in 0..2 {
            for j in 0..3 {
                assert!((g.at(i, c * 3 + j) - joint.at(i, c * 3 + j)).abs() < 1e-15);
            }
        }
    }
}

fn quaternion_weight(out_q: usize, in_q: usize, rng: &mut SplitMix) -> Tensor {
    rand_tensor(&[4, out_q, in_q], rng)
}

#[test]
fn hamilton_linear_fd() {
    let mut rng = SplitMix::new(10);
    let x = rand_tensor(&[3, 8], &mut rng);
    let w = quaternion_weight(3, 2, &mut rng);
    assert_fd(&[x, w], |t, v| {
        let y = t.hamilton_linear(v[0], v[1])?;
        project(t, y, 11)
    });
}

#[test]
fn hamilton_linear_identity_passes_input_and_gradient() {
    let mut rng = SplitMix::new(11);
    let x = rand_tensor(&[2, 12], &mut rng);
    let up = rand_tensor(&[2, 12], &mut rng);
    let mut w = Tensor::zeros(&[4, 3, 3]);
    for i in 0..3 {
        w.data_mut()[i * 3 + i] = 1.0;
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let wv = tape.param(w);
    let y = tape.hamilton_linear(xv, wv).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
    let u = tape.constant(up.clone());
    let p = tape.mul(y, u).unwrap();
    let loss = tape.sum_all(p).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(xv).unwrap().data(), up.data());
}

#[test]
fn one_by_one_weight_gradient_matches_symbolic_derivative() {
    // y = W ⊗ q, L = Σ_c g_c y_c. Differentiating the four rows of the
    // structured matrix by hand:
    //   dL/dW_r =  g_r q_r + g_x q_x + g_y q_y + g_z q_z
    //   dL/dW_x = -g_r q_x + g_x q_r - g_y q_z + g_z q_y
    //   dL/dW_y = -g_r q_y + g_x q_z + g_y q_r - g_z q_x
    //   dL/dW_z = -g_r q_z - g_x q_y + g_y q_x + g_z q_r
    let q = [0.3, -1.2, 0.7, 2.0];
    let g = [1.5, -0.4, 0.9, -2.2];
    let expect = [
        g[0] * q[0] + g[1] * q[1] + g[2] * q[2] + g[3] * q[3],
        -g[0] * q[1] + g[1] * q[0] - g[2] * q[3] + g[3] * q[2],
        -g[0] * q[2] + g[1] * q[3] + g[2] * q[0] - g[3] * q[1],
        -g[0] * q[3] - g[1] * q[2] + g[2] * q[1] + g[3] * q[0],
    ];
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(1, 4, q.to_vec()).unwrap());
    let wv = tape.param(Tensor::new(vec![4, 1, 1], vec![0.1, 0.2, -0.3, 0.4]).unwrap());
    let y = tape.hamilton_linear(xv, wv).unwrap();
    let gv = tape.constant(Tensor::matrix(1, 4, g.to_vec()).unwrap());
    let p = tape.mul(y, gv).unwrap();
    let loss = tape.sum_all(p).unwrap();
    let dw = tape.backward(loss).unwrap().get(wv).unwrap().clone();
    for (c, e) in expect.iter().enumerate() {
        assert!((dw.data()[c] - e).abs() < 1e-14);
    }
}

#[test]
fn shared_weight_gradient_is_sum_of_positional_gradients() {
    // Differentiate the same computation with all 16 block positions as
    // free parameters, then fold by the sign pattern and compare.
    let mut rng = SplitMix::new(12);
    let (out_q, in_q) = (2, 3);
    let x = rand_tensor(&[4, 4 * in_q], &mut rng);
    let w = quaternion_weight(out_q, in_q, &mut rng);
    let up = rand_tensor(&[4, 4 * out_q], &mut rng);

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let y = tape.hamilton_linear(xv, wv).unwrap();
    let u = tape.constant(up.clone());
    let p = tape.mul(y, u).unwrap();
    let loss = tape.sum_all(p).unwrap();
    let dw = tape.backward(loss).unwrap().get(wv).unwrap().clone();

    let expanded = super::kernels::expand_hamilton_weight(w.data(), out_q, in_q);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let mv = tape.param(Tensor::matrix(4 * out_q, 4 * in_q, expanded).unwrap());
    let y = tape.matmul_nt(xv, mv).unwrap();
    let u = tape.constant(up);
    let p = tape.mul(y, u).unwrap();
    let loss = tape.sum_all(p).unwrap();
    let dm = tape.backward(loss).unwrap().get(mv).unwrap().clone();

    let block = out_q * in_q;
    let mut folded = vec![0.0; 4 * block];
    for (c, terms) in crate::quaternion::HAMILTON_TERMS.iter().enumerate() {
        for t in terms {
            let sign = if t.negate { -1.0 } else { 1.0 };
            for o in 0..out_q {
                for i in 0..in_q {
                    folded[t.lhs * block + o * in_q + i] +=
                        sign * dm.at(c * out_q + o, t.rhs * in_q + i);
                }
            }
        }
    }
    assert_eq!(dw.len(), 4 * out_q * in_q);
    for (a, b) in dw.data().iter().zip(&folded) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backward_is_deterministic() {
    let mut rng = SplitMix::new(13);
    let x = rand_tensor(&[3, 8], &mut rng);
    let w = quaternion_weight(2, 2, &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w.clone());
        let y = tape.hamilton_linear(xv, wv).unwrap();
        let y = tape.tanh(y).unwrap();
        let loss = tape.cross_entropy(y, &[Some(0), Some(3), Some(7)]).unwrap();
        tape.backward(loss).unwrap().get(wv).unwrap().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn shape_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    let w = tape.constant(Tensor::zeros(&[4, 1, 2]));
    assert!(matches!(tape.hamilton_linear(a, w), Err(Error::Shape(_))));
    assert!(matches!(
        tape.component_softmax(a, None),
        Err(Error::Shape(_))
    ));
}

#[test]
fn empty_extents_flow_through() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[0, 8]));
    let w = tape.param(Tensor::zeros(&[4, 3, 2]));
    let y = tape.hamilton_linear(x, w).unwrap();
    assert_eq!(tape.value(y).shape(), &[0, 12]);
    let s = tape.sum_all(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[0.0; 24]);
}

#[test]
fn qtranspose_and_qconcat_layouts() {
    use crate::layers::{quaternion_to_real, real_to_quaternion};
    let mut rng = SplitMix::new(17);
    let e = rand_tensor(&[2, 12], &mut rng);
    let mut tape = Tape::new();
    let ev = tape.constant(e.clone());
    let t = tape.qtranspose(ev).unwrap();
    let expected = quaternion_to_real(&real_to_quaternion(&e).unwrap().transpose()).unwrap();
    assert_eq!(tape.value(t), &expected);

    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3, 8], &mut rng);
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let cat = tape.qconcat(&[av, bv]).unwrap();
    let got = real_to_quaternion(tape.value(cat)).unwrap();
    let (qa, qb) = (
        real_to_quaternion(&a).unwrap(),
        real_to_quaternion(&b).unwrap(),
    );
    for i in 0..3 {
        assert_eq!(got.get2(i, 0), qa.get2(i, 0));
        assert_eq!(got.get2(i, 1), qb.get2(i, 0));
        assert_eq!(got.get2(i, 2), qb.get2(i, 1));
    }
}

#[test]
fn qtranspose_and_qconcat_gradients() {
    let mut rng = SplitMix::new(18);
    let leaves = vec![
        rand_tensor(&[2, 12], &mut rng),
        rand_tensor(&[3, 4], &mut rng),
    ];
    let checks = check_gradients(&leaves, FD_STEP, |tape, v| {
        let t = tape.qtranspose(v[0])?;
        let c = tape.qconcat(&[t, v[1], t])?;
        let s = tape.tanh(c)?;
        let q = tape.mul(s, c)?;
        tape.sum_all(q)
    })
    .unwrap();
    assert!(checks.iter().all(|c| c.passes(FD_TOLERANCE)));
}

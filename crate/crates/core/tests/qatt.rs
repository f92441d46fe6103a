use quatnn::autodiff::gradcheck::{check_gradients, FD_STEP, FD_TOLERANCE};
use quatnn::layers::{qffn_forward, ActivationKind, Binding, Dense};
use quatnn::qatt::{
    align, component_softmax, cross_scores, transform_weight_ratio, AttKind, QAtt, QAttConfig,
};
use quatnn::rng::SplitMix;
use quatnn::{Error, QTensor, Quaternion};

fn random_qt(rows: usize, cols: usize, rng: &mut SplitMix) -> QTensor {
    let v: Vec<Quaternion> = (0..rows * cols)
        .map(|_| {
            Quaternion::new(
                rng.uniform(-1., 1.),
                rng.uniform(-1., 1.),
                rng.uniform(-1., 1.),
                rng.uniform(-1., 1.),
            )
        })
        .collect();
    QTensor::from_quaternions(&[rows, cols], &v).unwrap()
}

fn close(a: Quaternion, b: Quaternion, tol: f64) -> bool {
    (0..4).all(|c| (a.component(c) - b.component(c)).abs() <= tol)
}

fn small_config(seed: u64) -> QAttConfig {
    QAttConfig {
        vocab: 12,
        d: 2,
        hidden_q: 2,
        num_classes: 3,
        activation: ActivationKind::Tanh,
        seed,
        ..Default::default()
    }
}

#[test]
fn cross_scores_degenerate_cases() {
    let mut rng = SplitMix::new(1);
    let (a, b) = (random_qt(1, 1, &mut rng), random_qt(1, 1, &mut rng));
    assert_eq!(
        cross_scores(&a, &b).unwrap().get2(0, 0),
        a.get2(0, 0) * b.get2(0, 0)
    );

    let a = random_qt(3, 1, &mut rng);
    let ones = QTensor::from_quaternions(&[2, 1], &[Quaternion::ONE; 2]).unwrap();
    let e = cross_scores(&a, &ones).unwrap();
    for i in 0..3 {
        assert_eq!(e.get2(i, 0), a.get2(i, 0));
        assert_eq!(e.get2(i, 1), a.get2(i, 0));
    }
}

#[test]
fn cross_scores_match_scalar_loop() {
    let mut rng = SplitMix::new(2);
    let (a, b) = (random_qt(2, 3, &mut rng), random_qt(2, 3, &mut rng));
    let e = cross_scores(&a, &b).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = Quaternion::ZERO;
            for t in 0..3 {
                acc = acc + a.get2(i, t) * b.get2(j, t);
            }
            assert!(close(e.get2(i, j), acc, 1e-14));
        }
    }
    assert!(matches!(
        cross_scores(&a, &random_qt(2, 2, &mut rng)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn component_softmax_matches_real_softmax_per_component() {
    let mut rng = SplitMix::new(3);
    let e = random_qt(3, 4, &mut rng).scale(4.0);
    let g = component_softmax(&e).unwrap();
    for c in 0..4 {
        for i in 0..3 {
            let row: Vec<f64> = (0..4).map(|j| e.get2(i, j).component(c)).collect();
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for (j, v) in row.iter().enumerate() {
                assert!((g.get2(i, j).component(c) - v.exp() / denom).abs() < 1e-14);
            }
        }
    }
    let constant =
        QTensor::from_quaternions(&[1, 5], &[Quaternion::new(2., -1., 0., 7.); 5]).unwrap();
    let u = component_softmax(&constant).unwrap();
    assert!(u.to_quaternions().iter().all(|q| close(
        *q,
        Quaternion::new(0.2, 0.2, 0.2, 0.2),
        1e-15
    )));
    let single = component_softmax(&random_qt(2, 1, &mut rng)).unwrap();
    assert!(single
        .to_quaternions()
        .iter()
        .all(|q| *q == Quaternion::new(1., 1., 1., 1.)));
}

#[test]
fn align_is_four_independent_products() {
    let mut rng = SplitMix::new(4);
    let g = random_qt(2, 3, &mut rng);
    let b = random_qt(3, 2, &mut rng);
    let out = align(&g, &b).unwrap();
    for i in 0..2 {
        for t in 0..2 {
            for c in 0..4 {
                let want: f64 = (0..3)
                    .map(|j| g.get2(i, j).component(c) * b.get2(j, t).component(c))
                    .sum();
                assert!((out.get2(i, t).component(c) - want).abs() < 1e-14);
            }
        }
    }
    // one-hot weights select a row, components chosen independently
    let mut comps = [vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]];
    for (c, comp) in comps.iter_mut().enumerate() {
        comp[c % 3] = 1.0;
    }
    let sel = QTensor::from_components(&[1, 3], comps).unwrap();
    let row = align(&sel, &b).unwrap();
    for t in 0..2 {
        for c in 0..4 {
            assert_eq!(row.get2(0, t).component(c), b.get2(c % 3, t).component(c));
        }
    }
}

fn qconcat(parts: &[&QTensor]) -> QTensor {
    let rows = parts[0].shape()[0];
    let mut comps: [Vec<f64>; 4] = Default::default();
    let mut width = 0;
    for (c, comp) in comps.iter_mut().enumerate() {
        for i in 0..rows {
            for p in parts {
                let w = p.shape()[1];
                comp.extend_from_slice(&p.component(c)[i * w..(i + 1) * w]);
            }
        }
    }
    for p in parts {
        width += p.shape()[1];
    }
    QTensor::from_components(&[rows, width], comps).unwrap()
}

fn sum_rows(q: &QTensor) -> QTensor {
    let (n, w) = (q.shape()[0], q.shape()[1]);
    let v: Vec<Quaternion> = (0..w)
        .map(|t| (0..n).fold(Quaternion::ZERO, |acc, i| acc + q.get2(i, t)))
        .collect();
    QTensor::from_quaternions(&[1, w], &v).unwrap()
}

fn dense_q(layer: &Dense, model: &QAtt, x: &QTensor) -> QTensor {
    match layer {
        Dense::Quaternion(l) => qffn_forward(l, &model.params, model.config.activation, x).unwrap(),
        Dense::Real(_) => unreachable!(),
    }
}

#[test]
fn forward_matches_composition_of_primitives() {
    let model = QAtt::new(small_config(5)).unwrap();
    let (a_ids, b_ids) = ([1, 4, 7], [2, 4, 9, 11]);
    let a = model.embed.embed(&model.params, &a_ids).unwrap();
    let b = model.embed.embed(&model.params, &b_ids).unwrap();
    let e = cross_scores(&a, &b).unwrap();
    let g = component_softmax(&e).unwrap();
    let f = component_softmax(&e.transpose()).unwrap();
    let b_al = align(&g, &b).unwrap();
    let a_al = align(&f, &a).unwrap();
    let m1 = qconcat(&[
        &a_al,
        &b,
        &a_al.hamilton_elementwise(&b).unwrap(),
        &a_al.sub(&b).unwrap(),
    ]);
    let c1 = sum_rows(&dense_q(&model.compare_a, &model, &m1));
    let m2 = qconcat(&[
        &b_al,
        &a,
        &b_al.hamilton_elementwise(&a).unwrap(),
        &b_al.sub(&a).unwrap(),
    ]);
    let c2 = sum_rows(&dense_q(model.compare_b.as_ref().unwrap(), &model, &m2));
    let m = qconcat(&[
        &c1,
        &c2,
        &c1.hamilton_elementwise(&c2).unwrap(),
        &c1.sub(&c2).unwrap(),
    ]);
    let y = dense_q(&model.aggregate, &model, &m);
    let (logits, _) = model
        .head
        .classify(&model.params, &y.clone().reshaped(&[2]).unwrap(), None)
        .unwrap();

    let state = model.alignment(&a_ids, &b_ids).unwrap();
    assert_eq!(state.e.shape(), [3, 4]);
    assert_eq!(state.f.shape(), [4, 3]);
    assert_eq!(state.a_aligned.shape(), [4, 2]);
    assert_eq!(state.b_aligned.shape(), [3, 2]);
    for (got, want) in [
        (&state.e, &e),
        (&state.g, &g),
        (&state.f, &f),
        (&state.c1, &c1),
        (&state.c2, &c2),
        (&state.y, &y),
    ] {
        for (p, q) in got.to_quaternions().iter().zip(want.to_quaternions()) {
            assert!(close(*p, q, 1e-12));
        }
    }
    assert_eq!(state.logits.len(), 3);
    for (p, q) in state.logits.iter().zip(&logits) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn attention_rows_normalized_under_permutation() {
    let model = QAtt::new(small_config(6)).unwrap();
    for b in [[3, 5, 8, 1], [1, 8, 5, 3]] {
        let s = model.alignment(&[2, 2, 6], &b).unwrap();
        for w in [&s.g, &s.f] {
            let (rows, cols) = (w.shape()[0], w.shape()[1]);
            for c in 0..4 {
                for i in 0..rows {
                    let total: f64 = (0..cols).map(|j| w.get2(i, j).component(c)).sum();
                    assert!((total - 1.0).abs() <= 1e-6);
                }
            }
        }
        assert!(s.logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for kind in [AttKind::Quaternion, AttKind::Real] {
        let model = QAtt::new(QAttConfig {
            kind,
            ..small_config(7)
        })
        .unwrap();
        let leaves = model.params.snapshot();
        let checks = check_gradients(&leaves, FD_STEP, |tape, vars| {
            let params = Binding::from_vars(vars.to_vec());
            let logits = model.batch_logits(
                tape,
                &params,
                &[(&[1, 3, 3, 5], &[2, 3, 7]), (&[0, 9], &[4, 4, 1, 10])],
            )?;
            tape.cross_entropy(logits, &[Some(2), Some(0)])
        })
        .unwrap();
        assert_eq!(checks.len(), model.params.len());
        for c in &checks {
            let name = &model
                .params
                .get(model.params.ids().nth(c.index).unwrap())
                .name;
            assert!(
                c.passes(FD_TOLERANCE),
                "{kind} {name}: rel error {}",
                c.rel_error
            );
        }
    }
}

#[test]
fn transform_weight_ratio_is_exactly_a_quarter() {
    for (d, h) in [(1, 1), (2, 3), (8, 8), (50, 50)] {
        let cfg = QAttConfig {
            d,
            hidden_q: h,
            ..Default::default()
        };
        let (q, r) = transform_weight_ratio(&cfg).unwrap();
        assert_eq!(4 * q, r, "d={d} h={h}");
        // two compare layers and one aggregate layer
        assert_eq!(q, 2 * 4 * (4 * d) * h + 4 * (4 * h) * h);
    }
}

#[test]
fn shared_compare_drops_one_layer() {
    let two = QAtt::new(small_config(1)).unwrap();
    let one = QAtt::new(QAttConfig {
        share_compare: true,
        ..small_config(1)
    })
    .unwrap();
    assert!(one.compare_b.is_none());
    assert_eq!(two.transform_weights() - one.transform_weights(), 4 * 8 * 2);
    assert_eq!(one.predict(&[1], &[2]).unwrap().len(), 3);
}

#[test]
fn deterministic_and_validated() {
    let a = QAtt::new(small_config(9))
        .unwrap()
        .predict(&[1, 2], &[3])
        .unwrap();
    let b = QAtt::new(small_config(9))
        .unwrap()
        .predict(&[1, 2], &[3])
        .unwrap();
    assert_eq!(a, b);
    let model = QAtt::new(small_config(9)).unwrap();
    assert!(matches!(model.predict(&[], &[3]), Err(Error::Contract(_))));
    assert!(matches!(
        model.predict(&[1], &[12]),
        Err(Error::Lookup { .. })
    ));
    assert!(matches!(
        QAtt::new(QAttConfig {
            d: 0,
            ..small_config(1)
        }),
        Err(Error::Config { .. })
    ));
}

//! Self-checks of the algebra, the structured-matrix oracle, layer gradients
//! and attention normalization. Every check returns a named pass/fail record.

use std::fmt;

use crate::autodiff::gradcheck::{check_gradients, FD_STEP, FD_TOLERANCE};
use crate::autodiff::{AttentionMask, Tape, Var};
use crate::error::Result;
use crate::layers::linear::matvec4;
use crate::layers::{
    hamilton_matrix_form, ActivationKind, Binding, EmbedProjection, InitSpec, Linear, OutputHead,
    ParamRole, ParamStore, QLinear,
};
use crate::qatt::{AttKind, QAtt, QAttConfig};
use crate::quaternion::Quaternion;
use crate::rng::SplitMix;
use crate::tensor::Tensor;
use crate::transformer::{
    q_self_attention, Attention, DecoderBlock, EncoderBlock, FeedForward, LayerNorm, SeqBatch,
    Transformer, TransformerConfig, Variant,
};

/// Random operands drawn by the algebra and oracle checks.
pub const SAMPLES: usize = 1000;
/// Relative tolerance for identities that only hold up to rounding.
pub const ALGEBRA_TOLERANCE: f64 = 1e-10;
/// Largest deviation of an attention row sum from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Every trainable layer type; the gradient suite checks each one.
pub const LAYER_TYPES: [&str; 12] = [
    "qlinear",
    "linear",
    "embedding",
    "output_head",
    "layer_norm",
    "attention_quaternion",
    "attention_real",
    "feed_forward",
    "encoder_block",
    "decoder_block",
    "qatt",
    "transformer",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Hamilton product under test, so that a faulty implementation can be
/// substituted.
pub type ProductFn = fn(Quaternion, Quaternion) -> Quaternion;

pub fn random_quaternion(rng: &mut SplitMix) -> Quaternion {
    Quaternion::new(
        rng.uniform(-2.0, 2.0),
        rng.uniform(-2.0, 2.0),
        rng.uniform(-2.0, 2.0),
        rng.uniform(-2.0, 2.0),
    )
}

fn rel_err(a: Quaternion, b: Quaternion) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

/// Basis multiplication table exactly, then norm multiplicativity,
/// associativity and distributivity over `samples` random operands.
pub fn algebra(product: ProductFn, samples: usize, seed: u64) -> Vec<Check> {
    let (one, i, j, k) = (Quaternion::ONE, Quaternion::I, Quaternion::J, Quaternion::K);
    let table = [
        ("ij=k", product(i, j), k),
        ("jk=i", product(j, k), i),
        ("ki=j", product(k, i), j),
        ("ji=-k", product(j, i), -k),
        ("kj=-i", product(k, j), -i),
        ("ik=-j", product(i, k), -j),
        ("ii=-1", product(i, i), -one),
        ("jj=-1", product(j, j), -one),
        ("kk=-1", product(k, k), -one),
    ];
    let bad: Vec<&str> = table
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(n, ..)| *n)
        .collect();
    let mut out = vec![Check::new(
        "algebra.basis",
        bad.is_empty(),
        if bad.is_empty() {
            "9 products exact".to_string()
        } else {
            format!("wrong: {}", bad.join(", "))
        },
    )];

    let mut rng = SplitMix::derive(seed, 1);
    let (mut norm, mut assoc, mut dist) = (0f64, 0f64, 0f64);
    for _ in 0..samples {
        let (a, b, c) = (
            random_quaternion(&mut rng),
            random_quaternion(&mut rng),
            random_quaternion(&mut rng),
        );
        let lhs = a.norm() * b.norm();
        norm = norm.max((product(a, b).norm() - lhs).abs() / lhs.max(1e-300));
        assoc = assoc.max(rel_err(
            product(product(a, b), c),
            product(a, product(b, c)),
        ));
        dist = dist.max(rel_err(product(a, b + c), product(a, b) + product(a, c)));
        dist = dist.max(rel_err(product(a + b, c), product(a, c) + product(b, c)));
    }
    for (name, err) in [
        ("algebra.norm_multiplicative", norm),
        ("algebra.associative", assoc),
        ("algebra.distributive", dist),
    ] {
        out.push(Check::new(
            name,
            err <= ALGEBRA_TOLERANCE,
            format!("max rel err {err:.2e} over {samples}"),
        ));
    }
    out
}

/// `product(w, q)` against the structured 4×4 matrix of `w` applied to the
/// components of `q`. Both evaluate the same terms in the same order, so
/// they must agree bit for bit.
pub fn matrix_form_oracle(product: ProductFn, samples: usize, seed: u64) -> Check {
    let mut rng = SplitMix::derive(seed, 2);
    let mut mismatches = 0;
    let mut max_err = 0f64;
    for _ in 0..samples {
        let (w, q) = (random_quaternion(&mut rng), random_quaternion(&mut rng));
        let got = product(w, q).to_array();
        let want = matvec4(&hamilton_matrix_form(w), q.to_array());
        if got != want {
            mismatches += 1;
        }
        max_err = got
            .iter()
            .zip(want)
            .map(|(a, b)| (a - b).abs())
            .fold(max_err, f64::max);
    }
    Check::new(
        "oracle.matrix_form",
        mismatches == 0,
        format!("{mismatches} of {samples} pairs differ, max abs err {max_err:.2e}"),
    )
}

/// The quaternion layer kernel against per-entry matrix-form sums. The
/// kernel accumulates in a different order, so agreement is to 1e-12.
pub fn layer_matrix_form(seed: u64) -> Result<Check> {
    let (in_q, out_q, rows) = (5, 3, 4);
    let mut store = ParamStore::new();
    let mut init = InitSpec::glorot(seed).initializer();
    let layer = QLinear::new(&mut store, "w", in_q, out_q, false, &mut init);
    let w = layer.weight_qtensor(&store);
    let mut rng = SplitMix::derive(seed, 3);
    let x = Tensor::matrix(
        rows,
        4 * in_q,
        (0..rows * 4 * in_q)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect(),
    )?;
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &params, xv)?;
    let y = tape.value(y);
    let mut max_err = 0f64;
    for n in 0..rows {
        for o in 0..out_q {
            let mut acc = [0.0; 4];
            for t in 0..in_q {
                let q = std::array::from_fn(|c| x.at(n, c * in_q + t));
                let v = matvec4(&hamilton_matrix_form(w.get2(o, t)), q);
                (0..4).for_each(|c| acc[c] += v[c]);
            }
            for (c, a) in acc.iter().enumerate() {
                max_err = max_err.max((y.at(n, c * out_q + o) - a).abs());
            }
        }
    }
    Ok(Check::new(
        "oracle.layer_kernel",
        max_err <= 1e-12,
        format!("max abs err {max_err:.2e}"),
    ))
}

fn random_tensor(rows: usize, cols: usize, rng: &mut SplitMix) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .expect("shape")
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output entry carries a
/// distinct weight in the loss.
fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let (m, n) = tape.value(y).dims2();
    let r = tape.constant(random_tensor(m, n, &mut SplitMix::derive(seed, 99)));
    let p = tape.mul(y, r)?;
    tape.sum_all(p)
}

fn grad_check<F>(name: &str, leaves: &[Tensor], build: F) -> Result<Check>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let checks = check_gradients(leaves, FD_STEP, build)?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let failing = checks.iter().filter(|c| !c.passes(FD_TOLERANCE)).count();
    Ok(Check::new(
        format!("gradient.{name}"),
        failing == 0,
        format!("{} tensors, max rel err {worst:.2e}", checks.len()),
    ))
}

/// Gradient check of a layer whose parameters live in `store`, fed the
/// random input `x` as an extra leaf.
fn store_check<F>(name: &str, store: &ParamStore, x: Tensor, seed: u64, forward: F) -> Result<Check>
where
    F: Fn(&mut Tape, &Binding, Var) -> Result<Var>,
{
    let mut leaves = store.snapshot();
    let n = leaves.len();
    leaves.push(x);
    grad_check(name, &leaves, |tape, vars| {
        let params = Binding::from_vars(vars[..n].to_vec());
        let y = forward(tape, &params, vars[n])?;
        probe(tape, y, seed)
    })
}

fn tiny_transformer(variant: Variant, seed: u64) -> TransformerConfig {
    TransformerConfig {
        variant,
        layers: 1,
        d_q: 2,
        heads: 2,
        ffn_hidden: 8,
        vocab: 7,
        max_len: 4,
        seed,
        ..Default::default()
    }
}

/// One check per entry of [`LAYER_TYPES`], plus the component softmax.
pub fn gradients(seed: u64) -> Vec<Check> {
    let mut out = vec![Check::from_result(
        "gradient.component_softmax",
        component_softmax_gradient(seed),
    )];
    for name in LAYER_TYPES {
        out.push(Check::from_result(
            &format!("gradient.{name}"),
            layer_gradient(name, seed),
        ));
    }
    out
}

fn component_softmax_gradient(seed: u64) -> Result<Check> {
    let mut rng = SplitMix::derive(seed, 4);
    let x = random_tensor(6, 12, &mut rng);
    let mask = AttentionMask {
        batch: 2,
        q_len: 3,
        k_len: 3,
        causal: true,
        key_valid: None,
    };
    grad_check("component_softmax", &[x], |tape, v| {
        let a = tape.component_softmax(v[0], Some(&mask))?;
        probe(tape, a, seed)
    })
}

fn layer_gradient(name: &str, seed: u64) -> Result<Check> {
    let mut rng = SplitMix::derive(seed, 5);
    let mut store = ParamStore::new();
    let mut init = InitSpec::glorot(seed).initializer();
    let tc = tiny_transformer(Variant::Full, seed);
    let width = tc.d_model();
    // Two sequences of three positions.
    let (batch, len) = (2, 3);
    let mask = AttentionMask {
        batch,
        q_len: len,
        k_len: len,
        causal: false,
        key_valid: Some(vec![true, true, true, true, true, false]),
    };
    match name {
        "qlinear" => {
            let l = QLinear::new(&mut store, "q", 3, 2, true, &mut init);
            store_check(
                name,
                &store,
                random_tensor(4, 12, &mut rng),
                seed,
                |t, p, x| l.forward_act(t, p, x, ActivationKind::Tanh),
            )
        }
        "linear" => {
            let l = Linear::new(&mut store, "l", 5, 3, true, ParamRole::Transform, &mut init);
            store_check(
                name,
                &store,
                random_tensor(4, 5, &mut rng),
                seed,
                |t, p, x| l.forward(t, p, x),
            )
        }
        "embedding" => {
            let e = EmbedProjection::projected(
                &mut store,
                "e",
                6,
                3,
                2,
                ActivationKind::Tanh,
                &mut init,
            );
            grad_check(name, &store.snapshot(), |t, v| {
                let y = e.forward(t, &Binding::from_vars(v.to_vec()), &[0, 5, 2, 5])?;
                probe(t, y, seed)
            })
        }
        "output_head" => {
            let h = OutputHead::new(&mut store, "h", 3, 4, &mut init);
            let mut leaves = store.snapshot();
            leaves.push(random_tensor(2, 12, &mut rng));
            grad_check(name, &leaves, |t, v| {
                let (_, loss) = h.loss(t, &Binding::from_vars(v[..2].to_vec()), v[2], &[3, 1])?;
                Ok(loss)
            })
        }
        "layer_norm" => {
            let n = LayerNorm::new(&mut store, "n", 8);
            for id in store.ids().collect::<Vec<_>>() {
                for v in store.value_mut(id).data_mut() {
                    *v += rng.uniform(-0.5, 0.5);
                }
            }
            store_check(
                name,
                &store,
                random_tensor(3, 8, &mut rng),
                seed,
                |t, p, x| n.forward(t, p, x),
            )
        }
        "attention_quaternion" | "attention_real" => {
            let variant = if name == "attention_real" {
                Variant::Real
            } else {
                Variant::Full
            };
            let a = Attention::new(
                &mut store,
                "a",
                &TransformerConfig { variant, ..tc },
                &mut init,
            );
            store_check(
                name,
                &store,
                random_tensor(batch * len, width, &mut rng),
                seed,
                |t, p, x| a.forward(t, p, x, x, batch, &mask, &mut Vec::new()),
            )
        }
        "feed_forward" => {
            let f = FeedForward::new(&mut store, "f", &tc, &mut init);
            store_check(
                name,
                &store,
                random_tensor(3, width, &mut rng),
                seed,
                |t, p, x| f.forward(t, p, x),
            )
        }
        "encoder_block" => {
            let b = EncoderBlock::new(&mut store, "b", &tc, &mut init);
            store_check(
                name,
                &store,
                random_tensor(batch * len, width, &mut rng),
                seed,
                |t, p, x| b.forward(t, p, x, batch, &mask, &mut Vec::new()),
            )
        }
        "decoder_block" => {
            let b = DecoderBlock::new(&mut store, "b", &tc, &mut init);
            let memory = random_tensor(batch * len, width, &mut rng);
            let causal = AttentionMask::causal(batch, len);
            store_check(
                name,
                &store,
                random_tensor(batch * len, width, &mut rng),
                seed,
                |t, p, x| {
                    let m = t.constant(memory.clone());
                    b.forward(t, p, x, m, batch, &causal, &mask, &mut Vec::new())
                },
            )
        }
        "qatt" => {
            let mut checks = Vec::new();
            for kind in [AttKind::Quaternion, AttKind::Real] {
                let m = QAtt::new(QAttConfig {
                    vocab: 6,
                    d: 2,
                    hidden_q: 2,
                    kind,
                    seed,
                    ..Default::default()
                })?;
                checks.push(grad_check(name, &m.params.snapshot(), |t, v| {
                    let logits = m.batch_logits(
                        t,
                        &Binding::from_vars(v.to_vec()),
                        &[(&[1, 2, 3, 4], &[4, 5, 1])],
                    )?;
                    t.cross_entropy(logits, &[Some(1)])
                })?);
            }
            Ok(merge(name, checks))
        }
        "transformer" => {
            let mut checks = Vec::new();
            for variant in Variant::ALL {
                let m = Transformer::seq2seq(TransformerConfig {
                    heads: 1,
                    ..tiny_transformer(variant, seed)
                })?;
                let src = SeqBatch::new(&[vec![3, 4, 5], vec![6, 3]], 0);
                let tgt = SeqBatch::new(&[vec![1, 4], vec![1, 5]], 0);
                let targets = [Some(4), Some(2), Some(5), Some(2)];
                checks.push(grad_check(name, &m.params.snapshot(), |t, v| {
                    Ok(
                        m.seq2seq_loss(t, &Binding::from_vars(v.to_vec()), &src, &tgt, &targets)?
                            .1,
                    )
                })?);
            }
            Ok(merge(name, checks))
        }
        other => Ok(Check::new(
            format!("gradient.{other}"),
            false,
            "no gradient check for this layer type",
        )),
    }
}

fn merge(name: &str, checks: Vec<Check>) -> Check {
    Check::new(
        format!("gradient.{name}"),
        checks.iter().all(|c| c.passed),
        checks
            .iter()
            .map(|c| c.detail.as_str())
            .collect::<Vec<_>>()
            .join("; "),
    )
}

/// Largest `|row sum − 1|` over the rows of the `comps` column blocks of
/// `t`, skipping fully masked rows, and whether every masked entry is 0.
fn row_sums(t: &Tensor, comps: usize, mask: Option<&AttentionMask>) -> (f64, bool) {
    let (rows, cols) = t.dims2();
    let group = cols / comps;
    let mut worst = 0f64;
    let mut zeros = true;
    for r in 0..rows {
        for c in 0..comps {
            let block = &t.row(r)[c * group..(c + 1) * group];
            worst = worst.max((block.iter().sum::<f64>() - 1.0).abs());
            if let Some(m) = mask {
                zeros &= block
                    .iter()
                    .enumerate()
                    .all(|(k, &w)| m.allowed(r, k) || w == 0.0);
            }
        }
    }
    (worst, zeros)
}

/// Rows of every attention-weight matrix sum to one and causally masked
/// entries are exactly zero.
pub fn normalization(seed: u64) -> Vec<Check> {
    vec![
        Check::from_result("normalization.qatt", qatt_normalization(seed)),
        Check::from_result(
            "normalization.self_attention",
            self_attention_normalization(seed),
        ),
        Check::from_result("normalization.transformer", transformer_normalization(seed)),
    ]
}

fn qatt_normalization(seed: u64) -> Result<Check> {
    let m = QAtt::new(QAttConfig {
        seed,
        ..Default::default()
    })?;
    let mut rng = SplitMix::derive(seed, 6);
    let mut worst = 0f64;
    for _ in 0..20 {
        let seq = |rng: &mut SplitMix| -> Vec<usize> {
            let n = 1 + rng.below(8) as usize;
            (0..n).map(|_| rng.below(50) as usize).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let s = m.alignment(&a, &b)?;
        for q in [&s.g, &s.f] {
            let (rows, cols) = q.dims2();
            for r in 0..rows {
                for c in 0..4 {
                    let sum: f64 = (0..cols).map(|k| q.component(c)[r * cols + k]).sum();
                    worst = worst.max((sum - 1.0).abs());
                }
            }
        }
    }
    Ok(Check::new(
        "normalization.qatt",
        worst <= NORMALIZATION_TOLERANCE,
        format!("max |sum-1| {worst:.2e}"),
    ))
}

fn self_attention_normalization(seed: u64) -> Result<Check> {
    let mut rng = SplitMix::derive(seed, 7);
    let mut worst = 0f64;
    let mut zeros = true;
    for len in 1..=6 {
        let qt = |rng: &mut SplitMix| {
            let v: Vec<Quaternion> = (0..len * 3).map(|_| random_quaternion(rng)).collect();
            crate::QTensor::from_quaternions(&[len, 3], &v)
        };
        let (q, k, v) = (qt(&mut rng)?, qt(&mut rng)?, qt(&mut rng)?);
        for causal in [false, true] {
            let (_, w) = q_self_attention(&q, &k, &v, 12, causal)?;
            for comp in &w.comps {
                let mask = AttentionMask {
                    batch: 1,
                    q_len: len,
                    k_len: len,
                    causal,
                    key_valid: None,
                };
                let (e, z) = row_sums(comp, 1, Some(&mask));
                worst = worst.max(e);
                zeros &= z;
            }
        }
    }
    Ok(Check::new(
        "normalization.self_attention",
        worst <= NORMALIZATION_TOLERANCE && zeros,
        format!("max |sum-1| {worst:.2e}, causal zeros exact: {zeros}"),
    ))
}

fn transformer_normalization(seed: u64) -> Result<Check> {
    let m = Transformer::seq2seq(TransformerConfig {
        layers: 2,
        max_len: 8,
        vocab: 9,
        seed,
        ..tiny_transformer(Variant::Full, seed)
    })?;
    let src = SeqBatch::new(&[vec![3, 4, 5, 6], vec![7, 8]], 0);
    let tgt = SeqBatch::new(&[vec![1, 4, 4], vec![1, 5]], 0);
    let mut tape = Tape::new();
    let params = m.params.bind(&mut tape);
    let mut weights = Vec::new();
    let memory = m.encode(&mut tape, &params, &src, &mut weights)?;
    let encoder_heads = weights.len();
    m.decode(&mut tape, &params, memory, &src, &tgt, &mut weights)?;
    let mut worst = 0f64;
    let mut zeros = true;
    for (i, &w) in weights.iter().enumerate() {
        let (e, z) = if i < encoder_heads {
            row_sums(tape.value(w), 4, None)
        } else {
            // Decoder heads alternate self (causal) and cross attention per layer.
            let per_layer = 2 * m.config.heads;
            let self_attn = (i - encoder_heads) % per_layer < m.config.heads;
            let mask = self_attn.then(|| AttentionMask::causal(tgt.batch, tgt.len));
            row_sums(tape.value(w), 4, mask.as_ref())
        };
        worst = worst.max(e);
        zeros &= z;
    }
    Ok(Check::new(
        "normalization.transformer",
        worst <= NORMALIZATION_TOLERANCE && zeros,
        format!(
            "{} weight matrices, max |sum-1| {worst:.2e}, causal zeros exact: {zeros}",
            weights.len()
        ),
    ))
}

/// Every check, with the library's Hamilton product.
pub fn run_all(seed: u64) -> Report {
    run_with(Quaternion::hamilton, seed)
}

/// Every check, with `product` standing in for the Hamilton product in the
/// algebra and oracle checks.
pub fn run_with(product: ProductFn, seed: u64) -> Report {
    let mut checks = algebra(product, SAMPLES, seed);
    checks.push(matrix_form_oracle(product, SAMPLES, seed));
    checks.push(Check::from_result(
        "oracle.layer_kernel",
        layer_matrix_form(seed),
    ));
    checks.extend(gradients(seed));
    checks.extend(normalization(seed));
    Report { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hamilton product with one sign flipped in the `x` row.
    fn flipped(a: Quaternion, b: Quaternion) -> Quaternion {
        let (q, p) = (a.to_array(), b.to_array());
        Quaternion::new(
            q[0] * p[0] - q[1] * p[1] - q[2] * p[2] - q[3] * p[3],
            q[1] * p[0] + q[0] * p[1] + q[3] * p[2] + q[2] * p[3],
            q[2] * p[0] + q[3] * p[1] + q[0] * p[2] - q[1] * p[3],
            q[3] * p[0] - q[2] * p[1] + q[1] * p[2] + q[0] * p[3],
        )
    }

    #[test]
    fn everything_passes() {
        let r = run_all(7);
        let failures: Vec<String> = r.failures().map(|c| c.to_string()).collect();
        assert!(r.passed(), "{failures:#?}");
    }

    #[test]
    fn sign_error_fails_the_oracle() {
        let c = matrix_form_oracle(flipped, SAMPLES, 1);
        assert!(!c.passed);
        assert!(matrix_form_oracle(Quaternion::hamilton, SAMPLES, 1).passed);
        assert!(algebra(flipped, 50, 1).iter().any(|c| !c.passed));
    }

    #[test]
    fn gradient_suite_covers_every_layer_type() {
        let names: Vec<String> = gradients(3).into_iter().map(|c| c.name).collect();
        for t in LAYER_TYPES {
            assert!(names.contains(&format!("gradient.{t}")), "{t}");
        }
    }

    #[test]
    fn unknown_layer_type_is_reported() {
        let c = layer_gradient("conv", 1).unwrap();
        assert!(!c.passed && c.name == "gradient.conv");
    }
}

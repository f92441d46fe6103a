//! Quaternion attention model for sentence pairs.
//!
//! Both sequences are embedded as quaternion matrices `A: ℓa × d` and
//! `B: ℓb × d`. Cross scores `E = A ⊗ Bᵀ` are normalized per component in
//! both directions, each sequence is aligned onto the other without mixing
//! components, the alignments are compared token by token with quaternion
//! feed-forward layers, summed, aggregated, and classified by a real head.
//!
//! [`AttKind::Real`] builds the real-valued reference with the same
//! matching function at real width `4d`, used for parameter comparisons.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    real_to_quaternion, ActivationKind, Binding, Dense, EmbedProjection, InitScheme, InitSpec,
    OutputHead, ParamStore,
};
use crate::qtensor::QTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttKind {
    #[default]
    Quaternion,
    /// Real dot-product scores, row softmax, real dense layers.
    Real,
}

impl FromStr for AttKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quaternion" | "q" | "full" => Ok(AttKind::Quaternion),
            "real" => Ok(AttKind::Real),
            other => Err(Error::config(
                "variant",
                format!("`{other}` is not one of quaternion, real"),
            )),
        }
    }
}

impl fmt::Display for AttKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttKind::Quaternion => "quaternion",
            AttKind::Real => "real",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QAttConfig {
    pub vocab: usize,
    /// Quaternion width per token (real width `4d`).
    pub d: usize,
    /// Quaternion width of the compare and aggregate layers.
    pub hidden_q: usize,
    pub num_classes: usize,
    pub activation: ActivationKind,
    pub kind: AttKind,
    pub init: InitScheme,
    pub seed: u64,
    /// Use one compare layer for both directions instead of two.
    pub share_compare: bool,
}

impl Default for QAttConfig {
    fn default() -> Self {
        QAttConfig {
            vocab: 50,
            d: 8,
            hidden_q: 8,
            num_classes: 2,
            activation: ActivationKind::Relu,
            kind: AttKind::Quaternion,
            init: InitScheme::GlorotPerComponent,
            seed: 1,
            share_compare: false,
        }
    }
}

impl QAttConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("vocab", self.vocab),
            ("d", self.d),
            ("hidden_q", self.hidden_q),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QAtt {
    pub config: QAttConfig,
    pub params: ParamStore,
    pub embed: EmbedProjection,
    /// Compares `B` tokens with their alignment `A′`.
    pub compare_a: Dense,
    /// Compares `A` tokens with `B′`; `None` when shared with `compare_a`.
    pub compare_b: Option<Dense>,
    pub aggregate: Dense,
    pub head: OutputHead,
}

/// Tape handles of every intermediate of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct QAttTrace {
    pub e: Var,
    pub g: Var,
    pub f: Var,
    pub a_aligned: Var,
    pub b_aligned: Var,
    pub c1: Var,
    pub c2: Var,
    pub y: Var,
    pub logits: Var,
}

/// Quaternion intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct AlignmentState {
    /// `ℓa × ℓb` cross scores.
    pub e: QTensor,
    /// Softmax of `E` over B positions, `ℓa × ℓb`.
    pub g: QTensor,
    /// Softmax of `Eᵀ` over A positions, `ℓb × ℓa`.
    pub f: QTensor,
    /// `F`-weighted `A`, one row per B token.
    pub a_aligned: QTensor,
    /// `G`-weighted `B`, one row per A token.
    pub b_aligned: QTensor,
    pub c1: QTensor,
    pub c2: QTensor,
    pub y: QTensor,
    pub logits: Vec<f64>,
}

impl QAtt {
    pub fn new(config: QAttConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = InitSpec::new(config.init, config.seed).initializer();
        let quaternion = config.kind == AttKind::Quaternion;
        let (d, h) = (config.d, config.hidden_q);
        let embed = EmbedProjection::identity(&mut params, "embed", config.vocab, d, &mut init);
        let compare_a = Dense::new(
            &mut params,
            "compare_a",
            4 * d,
            h,
            true,
            quaternion,
            &mut init,
        );
        let compare_b = (!config.share_compare).then(|| {
            Dense::new(
                &mut params,
                "compare_b",
                4 * d,
                h,
                true,
                quaternion,
                &mut init,
            )
        });
        let aggregate = Dense::new(
            &mut params,
            "aggregate",
            4 * h,
            h,
            true,
            quaternion,
            &mut init,
        );
        let head = OutputHead::new(&mut params, "head", h, config.num_classes, &mut init);
        Ok(QAtt {
            config,
            params,
            embed,
            compare_a,
            compare_b,
            aggregate,
            head,
        })
    }

    /// Records one forward pass for the pair `(a, b)` on `tape`.
    pub fn trace(
        &self,
        tape: &mut Tape,
        params: &Binding,
        a: &[usize],
        b: &[usize],
    ) -> Result<QAttTrace> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::Contract("both sequences must be non-empty".into()));
        }
        let act = self.config.activation;
        let av = self.embed.forward(tape, params, a)?;
        let bv = self.embed.forward(tape, params, b)?;
        let quaternion = self.config.kind == AttKind::Quaternion;

        let (e, g, f, a_aligned, b_aligned) = if quaternion {
            let e = tape.hamilton_scores(av, bv, 1)?;
            let g = tape.component_softmax(e, None)?;
            let b_aligned = tape.component_product(g, bv, 1, 4)?;
            let et = tape.qtranspose(e)?;
            let f = tape.component_softmax(et, None)?;
            let a_aligned = tape.component_product(f, av, 1, 4)?;
            (e, g, f, a_aligned, b_aligned)
        } else {
            let e = tape.matmul_nt(av, bv)?;
            let g = tape.softmax_rows(e, None)?;
            let b_aligned = tape.matmul(g, bv)?;
            let et = tape.matmul_nt(bv, av)?;
            let f = tape.softmax_rows(et, None)?;
            let a_aligned = tape.matmul(f, av)?;
            (e, g, f, a_aligned, b_aligned)
        };

        let compare_b = self.compare_b.as_ref().unwrap_or(&self.compare_a);
        let m1 = self.matching(tape, a_aligned, bv)?;
        let h1 = self.compare_a.forward_act(tape, params, m1, act)?;
        let c1 = tape.sum_rows(h1)?;
        let m2 = self.matching(tape, b_aligned, av)?;
        let h2 = compare_b.forward_act(tape, params, m2, act)?;
        let c2 = tape.sum_rows(h2)?;
        let m = self.matching(tape, c1, c2)?;
        let y = self.aggregate.forward_act(tape, params, m, act)?;
        let logits = self.head.logits(tape, params, y)?;
        Ok(QAttTrace {
            e,
            g,
            f,
            a_aligned,
            b_aligned,
            c1,
            c2,
            y,
            logits,
        })
    }

    /// `[p; q; p∘q; p − q]` with `∘` the Hamilton product (quaternion) or
    /// the element-wise product (real).
    fn matching(&self, tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
        let diff = tape.sub(p, q)?;
        match self.config.kind {
            AttKind::Quaternion => {
                let prod = tape.hamilton_elem(p, q)?;
                tape.qconcat(&[p, q, prod, diff])
            }
            AttKind::Real => {
                let prod = tape.mul(p, q)?;
                tape.concat(&[p, q, prod, diff], 1)
            }
        }
    }

    /// Stacked logits `n × num_classes` for a batch of pairs on one tape.
    pub fn batch_logits(
        &self,
        tape: &mut Tape,
        params: &Binding,
        pairs: &[(&[usize], &[usize])],
    ) -> Result<Var> {
        let rows = pairs
            .iter()
            .map(|(a, b)| Ok(self.trace(tape, params, a, b)?.logits))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&rows, 0)
    }

    pub fn predict(&self, a: &[usize], b: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let t = self.trace(&mut tape, &params, a, b)?;
        Ok(tape.value(t.logits).data().to_vec())
    }

    /// Quaternion intermediates for inspection.
    pub fn alignment(&self, a: &[usize], b: &[usize]) -> Result<AlignmentState> {
        if self.config.kind != AttKind::Quaternion {
            return Err(Error::Contract(
                "alignment state exists only for the quaternion model".into(),
            ));
        }
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let t = self.trace(&mut tape, &params, a, b)?;
        let q = |v: Var| real_to_quaternion(tape.value(v));
        Ok(AlignmentState {
            e: q(t.e)?,
            g: q(t.g)?,
            f: q(t.f)?,
            a_aligned: q(t.a_aligned)?,
            b_aligned: q(t.b_aligned)?,
            c1: q(t.c1)?,
            c2: q(t.c2)?,
            y: q(t.y)?,
            logits: tape.value(t.logits).data().to_vec(),
        })
    }

    /// Weight scalars of the compare and aggregate transforms.
    pub fn transform_weights(&self) -> usize {
        self.params.count().weights()
    }
}

fn run_on_tape(
    parts: &[&QTensor],
    f: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<QTensor> {
    let mut tape = Tape::new();
    let vars = parts
        .iter()
        .map(|q| Ok(tape.constant(crate::layers::quaternion_to_real(q)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    real_to_quaternion(tape.value(out))
}

fn check_width(a: &QTensor, b: &QTensor, what: &str) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.dims2().1 != b.dims2().1 {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `E[i, j] = Σ_t A[i, t] ⊗ B[j, t]`.
pub fn cross_scores(a: &QTensor, b: &QTensor) -> Result<QTensor> {
    check_width(a, b, "cross_scores")?;
    run_on_tape(&[a, b], |tape, v| tape.hamilton_scores(v[0], v[1], 1))
}

/// Row softmax of each component of a quaternion matrix.
pub fn component_softmax(e: &QTensor) -> Result<QTensor> {
    if e.shape().len() != 2 {
        return Err(Error::shape(format!(
            "component_softmax needs a matrix, got {:?}",
            e.shape()
        )));
    }
    run_on_tape(&[e], |tape, v| tape.component_softmax(v[0], None))
}

/// `out_c = G_c · B_c` for each component `c`.
pub fn align(g: &QTensor, b: &QTensor) -> Result<QTensor> {
    if g.shape().len() != 2 || b.shape().len() != 2 || g.shape()[1] != b.shape()[0] {
        return Err(Error::shape(format!(
            "align: {:?} with {:?}",
            g.shape(),
            b.shape()
        )));
    }
    run_on_tape(&[g, b], |tape, v| tape.component_product(v[0], v[1], 1, 4))
}

/// Transform-layer weight counts `(quaternion, real)` at the widths of `config`.
pub fn transform_weight_ratio(config: &QAttConfig) -> Result<(usize, usize)> {
    let q = QAtt::new(QAttConfig {
        kind: AttKind::Quaternion,
        ..config.clone()
    })?;
    let r = QAtt::new(QAttConfig {
        kind: AttKind::Real,
        ..config.clone()
    })?;
    Ok((q.transform_weights(), r.transform_weights()))
}

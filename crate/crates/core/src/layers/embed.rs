use super::bridge::real_to_quaternion;
use super::init::Initializer;
use super::linear::Linear;
use super::params::{Binding, ParamId, ParamRole, ParamStore};
use super::ActivationKind;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::qtensor::QTensor;

/// Trainable token table followed by an optional real projection into a
/// width of `4·d` and a component-wise activation. Its output, read as
/// `[r | x | y | z]` blocks, is a quaternion sequence of width `d`.
#[derive(Debug, Clone)]
pub struct EmbedProjection {
    pub vocab: usize,
    pub table_width: usize,
    pub d: usize,
    pub table: ParamId,
    pub projection: Option<Linear>,
    pub act: ActivationKind,
}

impl EmbedProjection {
    /// Table of width `4·d` used directly, with no projection.
    pub fn identity(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        d: usize,
        init: &mut Initializer,
    ) -> Self {
        let table = store.add(
            format!("{name}.table"),
            ParamRole::Embedding,
            init.embedding(vocab, 4 * d),
        );
        EmbedProjection {
            vocab,
            table_width: 4 * d,
            d,
            table,
            projection: None,
            act: ActivationKind::Identity,
        }
    }

    /// Table of arbitrary width projected to `4·d`.
    pub fn projected(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        table_width: usize,
        d: usize,
        act: ActivationKind,
        init: &mut Initializer,
    ) -> Self {
        let table = store.add(
            format!("{name}.table"),
            ParamRole::Embedding,
            init.embedding(vocab, table_width),
        );
        let proj = Linear::new(
            store,
            &format!("{name}.proj"),
            table_width,
            4 * d,
            true,
            ParamRole::Embedding,
            init,
        );
        EmbedProjection {
            vocab,
            table_width,
            d,
            table,
            projection: Some(proj),
            act,
        }
    }

    /// `ids.len() × 4·d` on the tape.
    pub fn forward(&self, tape: &mut Tape, params: &Binding, ids: &[usize]) -> Result<Var> {
        let rows = tape.gather_rows(params.var(self.table), ids)?;
        match &self.projection {
            Some(p) => {
                let y = p.forward(tape, params, rows)?;
                self.act.apply(tape, y)
            }
            None => self.act.apply(tape, rows),
        }
    }

    /// Quaternion sequence `ids.len() × d`.
    pub fn embed(&self, store: &ParamStore, ids: &[usize]) -> Result<QTensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::Lookup {
                id: bad,
                len: self.vocab,
            });
        }
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let y = self.forward(&mut tape, &params, ids)?;
        real_to_quaternion(tape.value(y))
    }
}

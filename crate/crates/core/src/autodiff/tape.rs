use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{
    expand_hamilton_weight, fold_hamilton_grad, grouped_softmax, grouped_softmax_backward,
    AttentionMask, BlockProduct, BlockTerm,
};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, View, ViewMut};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Constant,
    Param,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddRow,
    Product(Rc<BlockProduct>),
    Concat {
        axis: usize,
    },
    Gather(Rc<Vec<usize>>),
    SumRows,
    SumAll,
    Tanh,
    Relu,
    Softmax {
        group: usize,
    },
    CrossEntropy {
        probs: Vec<f64>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    HamiltonLinear {
        expanded: Vec<f64>,
        in_q: usize,
        out_q: usize,
    },
    HamiltonElem {
        d: usize,
    },
    LayerNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddRow => "add_row",
            Op::Product(_) => "product",
            Op::Concat { .. } => "concat",
            Op::Gather(_) => "gather",
            Op::SumRows => "sum_rows",
            Op::SumAll => "sum_all",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Softmax { .. } => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::HamiltonLinear { .. } => "hamilton_linear",
            Op::HamiltonElem { .. } => "hamilton_elem",
            Op::LayerNorm { .. } => "layer_norm",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
    tape: u64,
}

impl Gradients {
    /// Gradient for a leaf (parameter or constant). Leaves that do not
    /// influence the loss report `None`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(&var.idx)
    }

    /// Like [`Gradients::get`] but yields zeros shaped like `like` for
    /// leaves the loss does not depend on.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// A reverse-mode differentiation record.
///
/// Nodes are appended in evaluation order; every node's inputs precede it,
/// so the graph is acyclic by construction and the backward pass is a single
/// sweep in reverse creation order.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    t.dims2()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations, i.e. nodes that have inputs.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Constant | Op::Param))
            .count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.idx].op.name()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.idx]
            .inputs
            .iter()
            .map(|&idx| Var { tape: self.id, idx })
            .collect()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} is not on this tape", v.idx)));
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        let inputs = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        self.nodes.push(Node { op, inputs, value });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        let idx = self.check(v)?;
        Ok(&self.nodes[idx].value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            inputs: vec![],
            value,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Param,
            inputs: vec![],
            value,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn is_param(&self, v: Var) -> bool {
        v.tape == self.id && matches!(self.nodes.get(v.idx).map(|n| &n.op), Some(Op::Param))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.val(a)?.shape(), self.val(b)?.shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, &[a, b], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub, |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let value = self.val(a)?.map(|v| alpha * v);
        self.push(Op::Scale(alpha), &[a], value)
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.val(x)?, self.val(row)?);
        let (m, n) = shape2(tx);
        if tr.len() != n {
            return Err(Error::shape(format!(
                "add_row: {n} columns, bias of {}",
                tr.len()
            )));
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (v, b) in data[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *v += b;
            }
        }
        let value = Tensor::matrix(m, n, data)?;
        self.push(Op::AddRow, &[x, row], value)
    }

    fn product(&mut self, a: Var, b: Var, spec: BlockProduct) -> Result<Var> {
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        if shape2(ta) != spec.lhs_shape() || shape2(tb) != spec.rhs_shape() {
            return Err(Error::shape(format!(
                "product operands {:?} and {:?} do not fit layout {:?} / {:?}",
                ta.shape(),
                tb.shape(),
                spec.lhs_shape(),
                spec.rhs_shape()
            )));
        }
        let data = spec.forward(ta.data(), tb.data());
        let (r, c) = spec.out_shape();
        let value = Tensor::matrix(r, c, data)?;
        self.push(Op::Product(Rc::new(spec)), &[a, b], value)
    }

    /// `a · b` for `m × k` and `k × n` matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.val(a)?);
        let (k2, n) = shape2(self.val(b)?);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        self.batched_matmul(a, b, 1)
    }

    /// `a · bᵀ` for `m × k` and `n × k` matrices.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.val(a)?);
        let (n, k2) = shape2(self.val(b)?);
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ")));
        }
        self.batched_matmul_nt(a, b, 1)
    }

    fn batch_extent(&self, v: Var, batch: usize, what: &str) -> Result<(usize, usize)> {
        let (r, c) = shape2(self.val(v)?);
        if batch == 0 || r % batch != 0 {
            return Err(Error::shape(format!(
                "{what}: {r} rows do not split into {batch} batches"
            )));
        }
        Ok((r / batch, c))
    }

    fn comp_width(width: usize, comps: usize, what: &str) -> Result<usize> {
        if !width.is_multiple_of(comps) {
            return Err(Error::shape(format!(
                "{what}: width {width} is not a multiple of {comps}"
            )));
        }
        Ok(width / comps)
    }

    /// Per batch block `b`: `a_b · v_b` where `a` is `batch·m × k` and `v` is
    /// `batch·k × n`.
    pub fn batched_matmul(&mut self, a: Var, v: Var, batch: usize) -> Result<Var> {
        self.component_product(a, v, batch, 1)
    }

    /// Per batch block: `a_b · b_bᵀ`; `a` is `batch·m × k`, `b` is `batch·n × k`.
    pub fn batched_matmul_nt(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (m, k) = self.batch_extent(a, batch, "batched_matmul_nt")?;
        let (n, k2) = self.batch_extent(b, batch, "batched_matmul_nt")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "batched_matmul_nt widths {k} vs {k2}"
            )));
        }
        let spec = BlockProduct {
            batch,
            m,
            k,
            n,
            lhs_comps: 1,
            rhs_comps: 1,
            out_comps: 1,
            rhs_transposed: true,
            terms: vec![BlockTerm {
                out: 0,
                lhs: 0,
                rhs: 0,
                sign: 1.0,
            }],
        };
        self.product(a, b, spec)
    }

    /// Per-component weighting that never mixes components:
    /// `out_c = g_c · v_c` for `comps` column blocks, per batch block.
    /// `g` is `batch·m × comps·k`, `v` is `batch·k × comps·n`.
    pub fn component_product(&mut self, g: Var, v: Var, batch: usize, comps: usize) -> Result<Var> {
        let (m, gw) = self.batch_extent(g, batch, "component_product")?;
        let (k, vw) = self.batch_extent(v, batch, "component_product")?;
        let kk = Self::comp_width(gw, comps, "component_product")?;
        let n = Self::comp_width(vw, comps, "component_product")?;
        if kk != k {
            return Err(Error::shape(format!(
                "component_product: weights span {kk} keys, values have {k} rows"
            )));
        }
        let spec = BlockProduct {
            batch,
            m,
            k,
            n,
            lhs_comps: comps,
            rhs_comps: comps,
            out_comps: comps,
            rhs_transposed: false,
            terms: BlockProduct::diagonal_terms(comps),
        };
        self.product(g, v, spec)
    }

    /// Quaternion cross scores `E = A ⊗ Bᵀ` per batch block:
    /// `E[i, j] = Σ_t A[i, t] ⊗ B[j, t]` with the Hamilton product and no
    /// conjugation. `a` is `batch·la × 4d`, `b` is `batch·lb × 4d`, both in
    /// `[r | x | y | z]` column blocks; the result is `batch·la × 4·lb`.
    pub fn hamilton_scores(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (m, wa) = self.batch_extent(a, batch, "hamilton_scores")?;
        let (n, wb) = self.batch_extent(b, batch, "hamilton_scores")?;
        if wa != wb {
            return Err(Error::shape(format!("hamilton_scores widths {wa} vs {wb}")));
        }
        let k = Self::comp_width(wa, 4, "hamilton_scores")?;
        let spec = BlockProduct {
            batch,
            m,
            k,
            n,
            lhs_comps: 4,
            rhs_comps: 4,
            out_comps: 4,
            rhs_transposed: true,
            terms: BlockProduct::hamilton_terms(),
        };
        self.product(a, b, spec)
    }

    /// Element-wise Hamilton product of two `n × 4d` quaternion matrices.
    pub fn hamilton_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hamilton_elem")?;
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        let (rows, w) = shape2(ta);
        let d = Self::comp_width(w, 4, "hamilton_elem")?;
        let mut out = vec![0.0; rows * w];
        for r in 0..rows {
            let (ra, rb) = (ta.row(r), tb.row(r));
            for (c, terms) in crate::quaternion::HAMILTON_TERMS.iter().enumerate() {
                for t in 0..d {
                    let mut s = 0.0;
                    for (n, term) in terms.iter().enumerate() {
                        let v = ra[term.lhs * d + t] * rb[term.rhs * d + t];
                        s = match (n, term.negate) {
                            (0, _) => v,
                            (_, true) => s - v,
                            (_, false) => s + v,
                        };
                    }
                    out[r * w + c * d + t] = s;
                }
            }
        }
        let value = Tensor::matrix(rows, w, out)?;
        self.push(Op::HamiltonElem { d }, &[a, b], value)
    }

    /// Structured quaternion linear map `Y[n, o] = Σ_t W[o, t] ⊗ X[n, t]`.
    ///
    /// `x` is `n × 4·in_q` in `[r | x | y | z]` column blocks; `w` holds the
    /// four free blocks `[4, out_q, in_q]`. The 16 signed positions of the
    /// real equivalent share those four blocks, and backward sums their
    /// contributions.
    pub fn hamilton_linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let tw = self.val(w)?;
        let (out_q, in_q) = match tw.shape() {
            [4, o, i] => (*o, *i),
            s => {
                return Err(Error::shape(format!(
                    "hamilton weight must be [4, out, in], got {s:?}"
                )))
            }
        };
        let tx = self.val(x)?;
        let (n, width) = shape2(tx);
        if width != 4 * in_q {
            return Err(Error::shape(format!(
                "hamilton_linear: input width {width}, layer expects {}",
                4 * in_q
            )));
        }
        let expanded = expand_hamilton_weight(tw.data(), out_q, in_q);
        let mut out = vec![0.0; n * 4 * out_q];
        gemm(
            1.0,
            View::new(tx.data(), n, 4 * in_q),
            View::new(&expanded, 4 * out_q, 4 * in_q).t(),
            0.0,
            ViewMut::new(&mut out, n, 4 * out_q),
        );
        let value = Tensor::matrix(n, 4 * out_q, out)?;
        self.push(
            Op::HamiltonLinear {
                expanded,
                in_q,
                out_q,
            },
            &[x, w],
            value,
        )
    }

    /// Concatenation along `axis` (0 = rows, 1 = columns) of 2-D values.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape(
                "concat needs at least one part and axis 0 or 1",
            ));
        }
        let dims = parts
            .iter()
            .map(|&p| Ok(shape2(self.val(p)?)))
            .collect::<Result<Vec<_>>>()?;
        let value = if axis == 0 {
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(Error::shape(format!("concat rows: column counts {dims:?}")));
            }
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.val(p)?.data());
            }
            Tensor::matrix(dims.iter().map(|d| d.0).sum(), cols, data)?
        } else {
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(Error::shape(format!("concat cols: row counts {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.val(p)?.row(r));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        self.push(Op::Concat { axis }, parts, value)
    }

    /// Output element `i` is input element `index[i]`; repeated indices
    /// accumulate in backward.
    pub(crate) fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let tx = self.val(x)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of {} elements",
                tx.len()
            )));
        }
        let data = index.iter().map(|&i| tx.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        self.push(Op::Gather(Rc::new(index)), &[x], value)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let cols: Vec<usize> = (start..start + len).collect();
        self.gather_cols(x, &cols)
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = shape2(self.val(x)?);
        if start + len > r {
            return Err(Error::shape(format!("slice_rows {start}+{len} of {r}")));
        }
        self.gather(x, (start * c..(start + len) * c).collect(), vec![len, c])
    }

    pub fn gather_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = shape2(self.val(x)?);
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::shape(format!("column {bad} out of {c}")));
        }
        let mut index = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            index.extend(cols.iter().map(|&j| i * c + j));
        }
        self.gather(x, index, vec![r, cols.len()])
    }

    /// Quaternion transpose of an `m × 4n` matrix in `[r | x | y | z]`
    /// blocks: the result is `n × 4m` with each component block transposed.
    pub fn qtranspose(&mut self, x: Var) -> Result<Var> {
        let (m, w) = shape2(self.val(x)?);
        let n = Self::comp_width(w, 4, "qtranspose")?;
        let mut index = Vec::with_capacity(m * w);
        for j in 0..n {
            for c in 0..4 {
                index.extend((0..m).map(|i| i * w + c * n + j));
            }
        }
        self.gather(x, index, vec![n, 4 * m])
    }

    /// Component-wise concatenation along the quaternion feature axis:
    /// parts `n × 4·d_p` become `n × 4·Σd_p` with the r blocks of all parts
    /// first, then the x blocks, and so on.
    pub fn qconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (_, w) = shape2(self.val(p)?);
            widths.push(Self::comp_width(w, 4, "qconcat")?);
        }
        let joined = self.concat(parts, 1)?;
        let mut cols = Vec::with_capacity(4 * widths.iter().sum::<usize>());
        for c in 0..4 {
            let mut offset = 0;
            for &d in &widths {
                cols.extend(offset + c * d..offset + (c + 1) * d);
                offset += 4 * d;
            }
        }
        self.gather_cols(joined, &cols)
    }

    /// Row lookup (embedding). Out-of-range ids are a lookup error.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = shape2(self.val(table)?);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Lookup { id: bad, len: r });
        }
        let mut index = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            index.extend(i * c..(i + 1) * c);
        }
        self.gather(table, index, vec![ids.len(), c])
    }

    /// Sum over rows (axis 0): `m × n → 1 × n`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.val(x)?;
        let (m, n) = shape2(tx);
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, v) in data.iter_mut().zip(tx.row(i)) {
                *d += v;
            }
        }
        self.push(Op::SumRows, &[x], Tensor::matrix(1, n, data)?)
    }

    /// Sum over columns (axis 1): `m × n → m × 1`, expressed with a ones vector.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (_, n) = shape2(self.val(x)?);
        let ones = self.constant(Tensor::full(&[n, 1], 1.0));
        self.matmul(x, ones)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x)?.sum();
        self.push(Op::SumAll, &[x], Tensor::scalar(s))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.val(x)?.map(f64::tanh);
        self.push(Op::Tanh, &[x], value)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.val(x)?.map(|v| v.max(0.0));
        self.push(Op::Relu, &[x], value)
    }

    /// Softmax over consecutive column groups of length `group`.
    pub fn grouped_softmax(
        &mut self,
        x: Var,
        group: usize,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let tx = self.val(x)?;
        let (m, n) = shape2(tx);
        if group == 0 && n != 0 || group != 0 && n % group != 0 {
            return Err(Error::shape(format!(
                "softmax groups of {group} over {n} columns"
            )));
        }
        if let Some(mk) = mask {
            if mk.batch * mk.q_len != m || mk.k_len != group {
                return Err(Error::shape(format!(
                    "mask {}x{} keys {} does not fit {m} rows, group {group}",
                    mk.batch, mk.q_len, mk.k_len
                )));
            }
        }
        let data = grouped_softmax(tx.data(), m, n, group, mask);
        let value = Tensor::matrix(m, n, data)?;
        self.push(Op::Softmax { group }, &[x], value)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let (_, n) = shape2(self.val(x)?);
        self.grouped_softmax(x, n, mask)
    }

    /// Four independent row-softmaxes, one per `[r | x | y | z]` column block.
    pub fn component_softmax(&mut self, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let (_, n) = shape2(self.val(x)?);
        let group = Self::comp_width(n, 4, "component_softmax")?;
        self.grouped_softmax(x, group, mask)
    }

    /// Mean softmax cross-entropy over the rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let tl = self.val(logits)?;
        let (m, c) = shape2(tl);
        if targets.len() != m {
            return Err(Error::shape(format!(
                "{} targets for {m} rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::Lookup { id: *bad, len: c });
        }
        let probs = grouped_softmax(tl.data(), m, c, c, None);
        let count = targets.iter().flatten().count();
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                // log-sum-exp form keeps very negative logits finite
                let row = tl.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[*t];
            }
        }
        let loss = if count > 0 { loss / count as f64 } else { 0.0 };
        let op = Op::CrossEntropy {
            probs,
            targets: targets.to_vec(),
            count,
        };
        self.push(op, &[logits], Tensor::scalar(loss))
    }

    /// Row-wise layer normalization with gain and bias vectors.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.val(x)?;
        let (m, n) = shape2(tx);
        if self.val(gain)?.len() != n || self.val(bias)?.len() != n {
            return Err(Error::shape(format!(
                "layer_norm over {n} columns with mismatched gain/bias"
            )));
        }
        let (g, b) = (self.val(gain)?.data(), self.val(bias)?.data());
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        self.push(Op::LayerNorm { xhat, inv_std }, &[x, gain, bias], value)
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), 1.0));

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.inputs.is_empty() {
                grads[idx] = Some(g);
                continue;
            }
            let contributions = self.local_grads(node, &g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                match &mut grads[*input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut out = HashMap::new();
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[idx].inputs.is_empty() {
                    out.insert(idx, g);
                }
            }
        }
        Ok(Gradients {
            grads: out,
            tape: self.id,
        })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        let like = |k: usize, data: Vec<f64>| {
            Some(Tensor::new(input(k).shape().to_vec(), data).expect("grad shape"))
        };
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param => vec![],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Op::Mul => {
                let (a, b) = (input(0).data(), input(1).data());
                vec![
                    like(0, gd.iter().zip(b).map(|(g, b)| g * b).collect()),
                    like(1, gd.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Scale(alpha) => vec![Some(g.map(|v| alpha * v))],
            Op::AddRow => {
                let (m, n) = g.dims2();
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for (d, v) in db.iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                vec![Some(g.clone()), like(1, db)]
            }
            Op::Product(spec) => {
                let (da, db) = spec.backward(input(0).data(), input(1).data(), gd);
                vec![like(0, da), like(1, db)]
            }
            Op::Concat { axis } => {
                let mut out = Vec::with_capacity(node.inputs.len());
                if *axis == 0 {
                    let mut off = 0;
                    for k in 0..node.inputs.len() {
                        let len = input(k).len();
                        out.push(like(k, gd[off..off + len].to_vec()));
                        off += len;
                    }
                } else {
                    let (rows, total) = g.dims2();
                    let widths: Vec<usize> =
                        (0..node.inputs.len()).map(|k| input(k).dims2().1).collect();
                    let mut parts: Vec<Vec<f64>> = widths
                        .iter()
                        .map(|w| Vec::with_capacity(rows * w))
                        .collect();
                    for r in 0..rows {
                        let mut off = r * total;
                        for (p, w) in parts.iter_mut().zip(&widths) {
                            p.extend_from_slice(&gd[off..off + w]);
                            off += w;
                        }
                    }
                    for (k, p) in parts.into_iter().enumerate() {
                        out.push(like(k, p));
                    }
                }
                out
            }
            Op::Gather(index) => {
                let mut dx = vec![0.0; input(0).len()];
                for (&i, &v) in index.iter().zip(gd) {
                    dx[i] += v;
                }
                vec![like(0, dx)]
            }
            Op::SumRows => {
                let (m, n) = input(0).dims2();
                let mut dx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    dx.extend_from_slice(gd);
                }
                vec![like(0, dx)]
            }
            Op::SumAll => vec![like(0, vec![gd[0]; input(0).len()])],
            Op::Tanh => {
                let y = node.value.data();
                vec![like(
                    0,
                    gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                )]
            }
            Op::Relu => {
                let x = input(0).data();
                vec![like(
                    0,
                    gd.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Softmax { group } => {
                vec![like(
                    0,
                    grouped_softmax_backward(node.value.data(), gd, *group),
                )]
            }
            Op::CrossEntropy {
                probs,
                targets,
                count,
            } => {
                let c = input(0).dims2().1;
                let mut dx = vec![0.0; probs.len()];
                if *count > 0 {
                    let s = gd[0] / *count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            for j in 0..c {
                                dx[r * c + j] = s * probs[r * c + j];
                            }
                            dx[r * c + t] -= s;
                        }
                    }
                }
                vec![like(0, dx)]
            }
            Op::HamiltonLinear {
                expanded,
                in_q,
                out_q,
            } => {
                let (in_w, out_w) = (4 * in_q, 4 * out_q);
                let x = input(0);
                let n = x.dims2().0;
                let mut dx = vec![0.0; n * in_w];
                gemm(
                    1.0,
                    View::new(gd, n, out_w),
                    View::new(expanded, out_w, in_w),
                    0.0,
                    ViewMut::new(&mut dx, n, in_w),
                );
                let mut dm = vec![0.0; out_w * in_w];
                gemm(
                    1.0,
                    View::new(gd, n, out_w).t(),
                    View::new(x.data(), n, in_w),
                    0.0,
                    ViewMut::new(&mut dm, out_w, in_w),
                );
                vec![like(0, dx), like(1, fold_hamilton_grad(&dm, *out_q, *in_q))]
            }
            Op::HamiltonElem { d } => {
                let d = *d;
                let (a, b) = (input(0), input(1));
                let (rows, w) = a.dims2();
                let mut da = vec![0.0; rows * w];
                let mut db = vec![0.0; rows * w];
                for r in 0..rows {
                    let base = r * w;
                    for (c, terms) in crate::quaternion::HAMILTON_TERMS.iter().enumerate() {
                        for term in terms {
                            let sign = if term.negate { -1.0 } else { 1.0 };
                            for t in 0..d {
                                let go = sign * gd[base + c * d + t];
                                let (ia, ib) = (base + term.lhs * d + t, base + term.rhs * d + t);
                                da[ia] += go * b.data()[ib];
                                db[ib] += go * a.data()[ia];
                            }
                        }
                    }
                }
                vec![like(0, da), like(1, db)]
            }
            Op::LayerNorm { xhat, inv_std } => {
                let (m, n) = g.dims2();
                let gain = input(1).data();
                let mut dx = vec![0.0; m * n];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for i in 0..m {
                    let gr = g.row(i);
                    let xh = &xhat[i * n..(i + 1) * n];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..n {
                        let d = gr[j] * gain[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                        dgain[j] += gr[j] * xh[j];
                        dbias[j] += gr[j];
                    }
                    let nf = n as f64;
                    for j in 0..n {
                        let d = gr[j] * gain[j];
                        dx[i * n + j] = inv_std[i] / nf * (nf * d - sum_d - xh[j] * sum_dx);
                    }
                }
                vec![like(0, dx), like(1, dgain), like(2, dbias)]
            }
        }
    }
}

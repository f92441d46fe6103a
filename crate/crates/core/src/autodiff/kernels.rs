//! Numeric kernels shared by the forward and backward passes.

use crate::quaternion::HAMILTON_TERMS;
use crate::tensor::{gemm, View, ViewMut};

/// One term `out[out_comp] += ±lhs[lhs_comp] · rhs[rhs_comp]` of a block product.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockTerm {
    pub out: usize,
    pub lhs: usize,
    pub rhs: usize,
    pub sign: f64,
}

/// Layout of a batched, component-blocked matrix product.
///
/// The left operand has `batch·m` rows and `lhs_comps·k` columns; block
/// `(b, p)` is the `m × k` sub-matrix of rows `b·m..` and columns `p·k..`.
/// The right operand is `batch·k` by `rhs_comps·n` (blocks `k × n`), or when
/// `rhs_transposed` is set, `batch·n` by `rhs_comps·k` with every block used
/// transposed. The output is `batch·m` by `out_comps·n`.
#[derive(Debug, Clone)]
pub(crate) struct BlockProduct {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lhs_comps: usize,
    pub rhs_comps: usize,
    pub out_comps: usize,
    pub rhs_transposed: bool,
    pub terms: Vec<BlockTerm>,
}

impl BlockProduct {
    pub fn hamilton_terms() -> Vec<BlockTerm> {
        let mut terms = Vec::with_capacity(16);
        for (c, row) in HAMILTON_TERMS.iter().enumerate() {
            for t in row {
                terms.push(BlockTerm {
                    out: c,
                    lhs: t.lhs,
                    rhs: t.rhs,
                    sign: if t.negate { -1.0 } else { 1.0 },
                });
            }
        }
        terms
    }

    pub fn diagonal_terms(comps: usize) -> Vec<BlockTerm> {
        (0..comps)
            .map(|c| BlockTerm {
                out: c,
                lhs: c,
                rhs: c,
                sign: 1.0,
            })
            .collect()
    }

    pub fn lhs_shape(&self) -> (usize, usize) {
        (self.batch * self.m, self.lhs_comps * self.k)
    }

    pub fn rhs_shape(&self) -> (usize, usize) {
        if self.rhs_transposed {
            (self.batch * self.n, self.rhs_comps * self.k)
        } else {
            (self.batch * self.k, self.rhs_comps * self.n)
        }
    }

    pub fn out_shape(&self) -> (usize, usize) {
        (self.batch * self.m, self.out_comps * self.n)
    }

    fn lhs_block<'a>(&self, data: &'a [f64], b: usize, p: usize) -> View<'a> {
        View::block(
            data,
            self.lhs_comps * self.k,
            b * self.m,
            p * self.k,
            self.m,
            self.k,
        )
    }

    /// Block `(b, q)` of the right operand, oriented `k × n`.
    fn rhs_block<'a>(&self, data: &'a [f64], b: usize, q: usize) -> View<'a> {
        if self.rhs_transposed {
            View::block(
                data,
                self.rhs_comps * self.k,
                b * self.n,
                q * self.k,
                self.n,
                self.k,
            )
            .t()
        } else {
            View::block(
                data,
                self.rhs_comps * self.n,
                b * self.k,
                q * self.n,
                self.k,
                self.n,
            )
        }
    }

    fn rhs_block_mut<'a>(&self, data: &'a mut [f64], b: usize, q: usize) -> ViewMut<'a> {
        if self.rhs_transposed {
            ViewMut::block(
                data,
                self.rhs_comps * self.k,
                b * self.n,
                q * self.k,
                self.n,
                self.k,
            )
            .t()
        } else {
            ViewMut::block(
                data,
                self.rhs_comps * self.n,
                b * self.k,
                q * self.n,
                self.k,
                self.n,
            )
        }
    }

    pub fn forward(&self, lhs: &[f64], rhs: &[f64]) -> Vec<f64> {
        let (rows, cols) = self.out_shape();
        let mut out = vec![0.0; rows * cols];
        for b in 0..self.batch {
            for t in &self.terms {
                let c = ViewMut::block(&mut out, cols, b * self.m, t.out * self.n, self.m, self.n);
                gemm(
                    t.sign,
                    self.lhs_block(lhs, b, t.lhs),
                    self.rhs_block(rhs, b, t.rhs),
                    1.0,
                    c,
                );
            }
        }
        out
    }

    /// Gradients of both operands given the upstream gradient of the output.
    pub fn backward(&self, lhs: &[f64], rhs: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (lr, lc) = self.lhs_shape();
        let (rr, rc) = self.rhs_shape();
        let (_, oc) = self.out_shape();
        let mut d_lhs = vec![0.0; lr * lc];
        let mut d_rhs = vec![0.0; rr * rc];
        for b in 0..self.batch {
            for t in &self.terms {
                let g = View::block(grad_out, oc, b * self.m, t.out * self.n, self.m, self.n);
                // dL = ±G · Rᵀ
                let dl = ViewMut::block(&mut d_lhs, lc, b * self.m, t.lhs * self.k, self.m, self.k);
                gemm(t.sign, g, self.rhs_block(rhs, b, t.rhs).t(), 1.0, dl);
                // dR = ±Lᵀ · G
                let dr = self.rhs_block_mut(&mut d_rhs, b, t.rhs);
                gemm(t.sign, self.lhs_block(lhs, b, t.lhs).t(), g, 1.0, dr);
            }
        }
        (d_lhs, d_rhs)
    }
}

/// Expands quaternion weights `[4, out_q, in_q]` into the structured real
/// matrix `[4·out_q, 4·in_q]` whose `(c, s)` block is `±W_p`, `p` being the
/// weight component paired with input component `s` in output component `c`.
pub(crate) fn expand_hamilton_weight(w: &[f64], out_q: usize, in_q: usize) -> Vec<f64> {
    let block = out_q * in_q;
    let cols = 4 * in_q;
    let mut m = vec![0.0; 16 * block];
    for (c, terms) in HAMILTON_TERMS.iter().enumerate() {
        for t in terms {
            let src = &w[t.lhs * block..(t.lhs + 1) * block];
            for o in 0..out_q {
                let row = (c * out_q + o) * cols + t.rhs * in_q;
                let dst = &mut m[row..row + in_q];
                let srow = &src[o * in_q..(o + 1) * in_q];
                if t.negate {
                    dst.iter_mut().zip(srow).for_each(|(d, s)| *d = -s);
                } else {
                    dst.copy_from_slice(srow);
                }
            }
        }
    }
    m
}

/// Adjoint of [`expand_hamilton_weight`]: sums the 16 structured positions
/// back onto the four free weight blocks.
pub(crate) fn fold_hamilton_grad(dm: &[f64], out_q: usize, in_q: usize) -> Vec<f64> {
    let block = out_q * in_q;
    let cols = 4 * in_q;
    let mut dw = vec![0.0; 4 * block];
    for (c, terms) in HAMILTON_TERMS.iter().enumerate() {
        for t in terms {
            let sign = if t.negate { -1.0 } else { 1.0 };
            for o in 0..out_q {
                let row = (c * out_q + o) * cols + t.rhs * in_q;
                let dst = &mut dw[t.lhs * block + o * in_q..t.lhs * block + (o + 1) * in_q];
                for (d, s) in dst.iter_mut().zip(&dm[row..row + in_q]) {
                    *d += sign * s;
                }
            }
        }
    }
    dw
}

/// Which entries of a grouped softmax row may receive weight.
///
/// Rows are laid out `batch × q_len` and every softmax group spans `k_len`
/// keys; `causal` forbids key `j > i`, and `key_valid` (length `batch·k_len`)
/// masks padded keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub causal: bool,
    pub key_valid: Option<Vec<bool>>,
}

impl AttentionMask {
    pub fn causal(batch: usize, len: usize) -> Self {
        AttentionMask {
            batch,
            q_len: len,
            k_len: len,
            causal: true,
            key_valid: None,
        }
    }

    #[inline]
    pub fn allowed(&self, row: usize, key: usize) -> bool {
        let (b, i) = (row / self.q_len, row % self.q_len);
        if self.causal && key > i {
            return false;
        }
        match &self.key_valid {
            Some(v) => v[b * self.k_len + key],
            None => true,
        }
    }
}

/// Max-subtracted softmax over consecutive groups of `group` columns.
/// Masked entries get exactly zero weight; a fully masked group is all zero.
pub(crate) fn grouped_softmax(
    x: &[f64],
    rows: usize,
    cols: usize,
    group: usize,
    mask: Option<&AttentionMask>,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if group == 0 {
        return out;
    }
    for r in 0..rows {
        for g in 0..cols / group {
            let base = r * cols + g * group;
            let allowed = |j: usize| mask.is_none_or(|m| m.allowed(r, j));
            let mut max = f64::NEG_INFINITY;
            for j in 0..group {
                if allowed(j) {
                    max = max.max(x[base + j]);
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..group {
                if allowed(j) {
                    let e = (x[base + j] - max).exp();
                    out[base + j] = e;
                    sum += e;
                }
            }
            for v in &mut out[base..base + group] {
                *v /= sum;
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`grouped_softmax`] given its output `y`.
pub(crate) fn grouped_softmax_backward(y: &[f64], dy: &[f64], group: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    if group == 0 {
        return dx;
    }
    for base in (0..y.len()).step_by(group) {
        let ys = &y[base..base + group];
        let gs = &dy[base..base + group];
        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
        for j in 0..group {
            dx[base + j] = ys[j] * (gs[j] - dot);
        }
    }
    dx
}

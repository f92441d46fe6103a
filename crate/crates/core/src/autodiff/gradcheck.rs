//! Central finite-difference checks of tape gradients.

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Step used by the finite-difference oracle.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-5;

/// Agreement between analytic and finite-difference gradients for one leaf.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub index: usize,
    pub analytic: Tensor,
    pub numeric: Tensor,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or 0 when both
    /// norms are below 1e-12.
    pub rel_error: f64,
    pub max_abs_error: f64,
}

impl TensorCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error <= tol
    }
}

pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Evaluates `build` once with every tensor in `leaves` registered as a
/// trainable leaf, back-propagates, and compares each leaf's gradient with
/// central differences `(f(x + h) − f(x − h)) / 2h` taken entry by entry.
pub fn check_gradients<F>(leaves: &[Tensor], step: f64, build: F) -> Result<Vec<TensorCheck>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut work = leaves.to_vec();
    let mut out = Vec::with_capacity(leaves.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], leaf);
        let mut numeric = Tensor::zeros(leaf.shape());
        for e in 0..leaf.len() {
            let orig = leaf.data()[e];
            work[i].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[e] = orig;
            numeric.data_mut()[e] = (up - down) / (2.0 * step);
        }
        let rel_error = relative_error(&analytic, &numeric);
        let max_abs_error = analytic.max_abs_diff(&numeric);
        out.push(TensorCheck {
            index: i,
            analytic,
            numeric,
            rel_error,
            max_abs_error,
        });
    }
    Ok(out)
}

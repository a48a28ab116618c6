//! Dense linear algebra, activations and reverse-mode differentiation.
//!
//! Everything the model computes is expressed as [`Matrix`] values recorded
//! on a [`Tape`]; a single backward sweep then yields gradients for every
//! parameter. [`grad_check`] compares those gradients against central
//! finite differences.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, Stencil, TensorCheck, TensorSet};
pub use matrix::{matmul, Matrix};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Lower bound applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
pub fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(m: &Matrix) -> Matrix {
    m.map(f64::tanh)
}

pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

/// Numerically stable softmax of a single vector.
pub fn softmax_row(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn log_softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    for x in v.iter_mut() {
        *x -= log_total;
    }
}

//! Gated pooling readout and the softmax classifier.

use textgsl_autodiff::{Scalar, TensorError, Var};

use super::layers::{Linear, Mlp, ParamBuilder};
use super::pass::Pass;

pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutParams {
    pub f1: Mlp,
    pub f2: Mlp,
    pub classifier: Linear,
}

impl ReadoutParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, hidden: usize, classes: usize) -> Result<Self, TensorError> {
        Ok(Self {
            f1: Mlp::new(b, "readout.f1", hidden, hidden)?,
            f2: Mlp::new(b, "readout.f2", hidden, hidden)?,
            classifier: Linear::new(b, "cls", hidden, classes)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Readout {
    pub gates: Var,
    pub x_v: Var,
    pub x_g: Var,
}

/// `α = σ(f1(X))`, `X_v = α ⊙ tanh(f2(X))`, `X_g = max_rows(X_v) + mean_rows(X_v)`.
pub fn readout<T: Scalar>(pass: &mut Pass<'_, T>, params: &ReadoutParams, x: Var) -> Result<Readout, TensorError> {
    let g = params.f1.apply(pass, x)?;
    let gates = pass.tape.sigmoid(g);
    let v = params.f2.apply(pass, x)?;
    let v = pass.tape.tanh(v);
    let x_v = pass.tape.mul(gates, v)?;
    let mx = pass.tape.max_rows(x_v)?;
    let mean = pass.tape.mean_rows(x_v)?;
    let x_g = pass.tape.add(mx, mean)?;
    Ok(Readout { gates, x_v, x_g })
}

/// Logits and class probabilities, each `1 × C`.
pub fn classify<T: Scalar>(pass: &mut Pass<'_, T>, params: &ReadoutParams, x_g: Var) -> Result<(Var, Var), TensorError> {
    let logits = params.classifier.apply(pass, x_g)?;
    let probs = pass.tape.row_softmax(logits);
    Ok((logits, probs))
}

/// `−log p_y` with the probability clamped below at `1e-12`.
pub fn cross_entropy<T: Scalar>(pass: &mut Pass<'_, T>, probs: Var, label: usize) -> Result<Var, TensorError> {
    let p = pass.tape.gather_rows(probs, &[0])?;
    let p = pass.tape.slice_cols(p, label, label + 1)?;
    let l = pass.tape.ln_clamped(p, T::lit(LOG_CLAMP));
    pass.tape.affine(l, -T::one(), T::zero())
}

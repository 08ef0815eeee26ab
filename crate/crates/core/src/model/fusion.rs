//! Bidirectional GRU fusion of sequence and structure features.

use textgsl_autodiff::{Scalar, Tensor, TensorError, Var};

use super::layers::{GruParams, Linear, ParamBuilder};
use super::pass::Pass;

/// Row `t` of the result is the state of the node at token position `t`.
pub fn scatter_to_tokens<T: Scalar>(pass: &mut Pass<'_, T>, nodes: Var, token_nodes: &[usize]) -> Result<Var, TensorError> {
    pass.tape.gather_rows(nodes, token_nodes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub forward: GruParams,
    pub backward: GruParams,
    pub proj: Linear,
}

impl FusionParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, input: usize, hidden: usize) -> Result<Self, TensorError> {
        Ok(Self {
            forward: GruParams::new(b, "fuse.fwd", input, hidden)?,
            backward: GruParams::new(b, "fuse.bwd", input, hidden)?,
            proj: Linear::new(b, "fuse.proj", 2 * hidden, hidden)?,
        })
    }
}

/// Hidden states of a GRU run over the rows of `x` in the given order,
/// starting from zero; row `k` of the result is the state after `order[k]`.
pub fn gru_states<T: Scalar>(pass: &mut Pass<'_, T>, gru: &GruParams, x: Var, order: &[usize]) -> Result<Var, TensorError> {
    let hidden = pass.store.value(gru.uz).cols();
    let proj = gru.project_input(pass, x)?;
    let mut h = pass.tape.constant(Tensor::zeros(&[1, hidden]));
    let mut states = Vec::with_capacity(order.len());
    for &t in order {
        let step = [
            pass.tape.gather_rows(proj[0], &[t])?,
            pass.tape.gather_rows(proj[1], &[t])?,
            pass.tape.gather_rows(proj[2], &[t])?,
        ];
        h = gru.update(pass, step, h)?.next;
        states.push(h);
    }
    pass.tape.concat_rows(&states)
}

/// Forward and backward states aligned by token position, `n × 2H`.
pub fn bigru_states<T: Scalar>(pass: &mut Pass<'_, T>, params: &FusionParams, x: Var) -> Result<Var, TensorError> {
    let n = pass.tape.value(x).rows();
    let order: Vec<usize> = (0..n).collect();
    let rev: Vec<usize> = (0..n).rev().collect();
    let fwd = gru_states(pass, &params.forward, x, &order)?;
    let bwd = gru_states(pass, &params.backward, x, &rev)?;
    let bwd = pass.tape.gather_rows(bwd, &rev)?;
    pass.tape.concat(&[fwd, bwd])
}

/// Concatenates the branch features, runs the Bi-GRU and projects to the
/// hidden width.
pub fn fuse<T: Scalar>(pass: &mut Pass<'_, T>, params: &FusionParams, branches: &[Var]) -> Result<Var, TensorError> {
    let x = if branches.len() == 1 {
        branches[0]
    } else {
        pass.tape.concat(branches)?
    };
    let states = bigru_states(pass, params, x)?;
    params.proj.apply(pass, states)
}

//! Adaptive multi-relation message passing.

use std::collections::BTreeMap;

use textgsl_autodiff::{ParamId, Scalar, Tensor, TensorError, Var};

use super::config::Activation;
use super::layers::{GruParams, GruStep, Linear, ParamBuilder};
use super::pass::Pass;
use crate::graph::{Relation, TextGraph};

/// Edge layout of one graph prepared for batched evaluation.
///
/// Each directed edge `(src, dst)` means `src` receives a message from
/// `dst`. `pairs` holds every distinct directed pair once, so the weight of
/// a pair is computed once even when several relations connect it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub n_nodes: usize,
    pub token_nodes: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub relations: [RelationEdges; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationEdges {
    /// Index into `Topology::pairs` for each edge of this relation.
    pub pair_index: Vec<usize>,
    pub receivers: Vec<usize>,
    pub senders: Vec<usize>,
}

impl RelationEdges {
    pub fn len(&self) -> usize {
        self.pair_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_index.is_empty()
    }
}

impl Topology {
    pub fn from_graph(graph: &TextGraph) -> Self {
        let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for e in &graph.edges {
            let n = index.len();
            index.entry((e.src, e.dst)).or_insert(n);
        }
        let mut pairs = vec![(0, 0); index.len()];
        for (&p, &k) in &index {
            pairs[k] = p;
        }
        let mut relations: [RelationEdges; 3] = Default::default();
        for e in &graph.edges {
            let r = &mut relations[e.relation.index()];
            r.pair_index.push(index[&(e.src, e.dst)]);
            r.receivers.push(e.src);
            r.senders.push(e.dst);
        }
        Self {
            n_nodes: graph.n_nodes(),
            token_nodes: graph.token_nodes(),
            pairs,
            relations,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.token_nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.relations.iter().map(RelationEdges::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpnnParams {
    pub input: Linear,
    /// Column vector of length `2M`.
    pub alpha: ParamId,
    pub beta: ParamId,
    /// One scalar per relation, in `Relation::ALL` order.
    pub gamma: [ParamId; 3],
    pub gru: GruParams,
    pub steps: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl MpnnParams {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        input_dim: usize,
        hidden: usize,
        steps: usize,
        activation: Activation,
    ) -> Result<Self, TensorError> {
        let input = Linear::new(b, "str.input", input_dim, hidden)?;
        let alpha = b.constant("str.edge.alpha", &[2 * hidden, 1], 0.0)?;
        let beta = b.constant("str.edge.beta", &[1], 1.0)?;
        let mut gamma = [alpha; 3];
        for r in Relation::ALL {
            gamma[r.index()] = b.constant(&format!("str.gamma.{}", r.name()), &[1], 1.0)?;
        }
        let gru = GruParams::new(b, "str.gru", hidden, hidden)?;
        Ok(Self {
            input,
            alpha,
            beta,
            gamma,
            gru,
            steps,
            activation,
            dropout: 0.0,
        })
    }
}

/// `E_ij = exp(α·[X_i ‖ X_j] − β‖X_i − X_j‖²)` for every pair, as a
/// `pairs × 1` column.
pub fn edge_weights<T: Scalar>(
    pass: &mut Pass<'_, T>,
    x: Var,
    pairs: &[(usize, usize)],
    alpha: ParamId,
    beta: ParamId,
) -> Result<Var, TensorError> {
    let recv: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let send: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let (a, b) = (pass.p(alpha), pass.p(beta));
    let t = &mut *pass.tape;
    let xi = t.gather_rows(x, &recv)?;
    let xj = t.gather_rows(x, &send)?;
    let cat = t.concat(&[xi, xj])?;
    let s = t.matmul(cat, a)?;
    let d = t.row_sq_dist(x, pairs)?;
    let d = t.scale(d, b)?;
    let logit = t.sub(s, d)?;
    Ok(t.exp(logit))
}

fn activate<T: Scalar>(pass: &mut Pass<'_, T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => pass.tape.relu(x),
        Activation::Tanh => pass.tape.tanh(x),
        Activation::Sigmoid => pass.tape.sigmoid(x),
        Activation::Identity => x,
    }
}

/// Aggregated message `a_i = σ(Σ_ℓ γ_ℓ Σ_j E_ij X_j)` before dropout.
pub fn aggregate<T: Scalar>(
    pass: &mut Pass<'_, T>,
    x: Var,
    topo: &Topology,
    weights: Option<Var>,
    params: &MpnnParams,
) -> Result<Var, TensorError> {
    let cols = pass.tape.value(x).cols();
    let mut total: Option<Var> = None;
    for r in Relation::ALL {
        let rel = &topo.relations[r.index()];
        if rel.is_empty() {
            continue;
        }
        let w = weights.expect("edge weights for a graph with edges");
        let g = pass.p(params.gamma[r.index()]);
        let t = &mut *pass.tape;
        let e = t.gather_rows(w, &rel.pair_index)?;
        let xs = t.gather_rows(x, &rel.senders)?;
        let m = t.mul(xs, e)?;
        let m = t.scatter_add_rows(m, &rel.receivers, topo.n_nodes)?;
        let m = t.scale(m, g)?;
        total = Some(match total {
            Some(acc) => t.add(acc, m)?,
            None => m,
        });
    }
    let sum = match total {
        Some(v) => v,
        None => pass.tape.constant(Tensor::zeros(&[topo.n_nodes, cols])),
    };
    Ok(activate(pass, sum, params.activation))
}

/// Diagnostics of one message passing step.
#[derive(Debug, Clone, Copy)]
pub struct StepTrace {
    pub weights: Option<Var>,
    pub message: Var,
    pub gru: GruStep,
}

/// One message passing step: edge weights from the current states, the
/// aggregated message with dropout, and the GRU update.
pub fn mpnn_step<T: Scalar>(
    pass: &mut Pass<'_, T>,
    x: Var,
    topo: &Topology,
    params: &MpnnParams,
) -> Result<StepTrace, TensorError> {
    let weights = if topo.pairs.is_empty() {
        None
    } else {
        Some(edge_weights(pass, x, &topo.pairs, params.alpha, params.beta)?)
    };
    let a = aggregate(pass, x, topo, weights, params)?;
    let a = pass.dropout(a, params.dropout)?;
    let proj = params.gru.project_input(pass, a)?;
    let gru = params.gru.update(pass, proj, x)?;
    Ok(StepTrace {
        weights,
        message: a,
        gru,
    })
}

/// Node states after the input projection and `steps` message passing
/// steps, with the per-step traces.
pub fn structural_branch<T: Scalar>(
    pass: &mut Pass<'_, T>,
    node_features: Var,
    topo: &Topology,
    params: &MpnnParams,
) -> Result<(Var, Vec<StepTrace>), TensorError> {
    let mut x = params.input.apply(pass, node_features)?;
    let mut steps = Vec::with_capacity(params.steps);
    for _ in 0..params.steps {
        let s = mpnn_step(pass, x, topo, params)?;
        x = s.gru.next;
        steps.push(s);
    }
    Ok((x, steps))
}

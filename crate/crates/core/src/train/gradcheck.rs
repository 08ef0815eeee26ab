//! Per-layer finite-difference report on a fixed two-document toy batch.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use textgsl_autodiff::{
    finite_diff_check_with_reference, DoubleDouble, LossProgram, ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var,
};

use crate::corpus::{Document, Split};
use crate::graph::{assemble_graph, Relation, TextGraph, TypedEdge};
use crate::model::{DocInput, Mode, ModelConfig, ModelError, ModelSpec, Pass, TextGsl};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Layer name and the parameter-name prefixes it covers.
pub const LAYERS: [(&str, &[&str]); 6] = [
    ("encoder", &["seq."]),
    ("edge_weights", &["str.edge."]),
    ("mpnn_step", &["str.input.", "str.gamma.", "str.gru."]),
    ("bigru", &["fuse."]),
    ("readout", &["readout."]),
    ("classifier", &["cls."]),
];

#[derive(Debug, Clone, Serialize)]
pub struct LayerCheck {
    pub layer: String,
    pub tensors: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    /// Scalar type the central differences were evaluated in.
    pub reference: &'static str,
    pub eps: f64,
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Mean cross-entropy of a model over a fixed batch, evaluable at any
/// precision. Dropout masks depend only on `mask_seed`.
pub struct BatchLoss<'a> {
    pub model: &'a TextGsl<f64>,
    pub batch: Vec<(DocInput<f64>, usize)>,
    pub train: bool,
    pub mask_seed: u64,
}

impl LossProgram for BatchLoss<'_> {
    fn loss<S: Scalar>(&self, store: &ParamStore<S>, tape: &mut Tape<S>) -> Result<Var, TensorError> {
        let model = self.model.cast::<S>();
        let docs: Vec<DocInput<S>> = self.batch.iter().map(|(d, _)| d.cast()).collect();
        let batch: Vec<(&DocInput<S>, usize)> = docs.iter().zip(&self.batch).map(|(d, (_, y))| (d, *y)).collect();
        let mut mask_rng = ChaCha8Rng::seed_from_u64(self.mask_seed);
        let mut pass = Pass::new(tape, store, self.train, &mut mask_rng);
        model.batch_loss(&mut pass, &batch).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::InvalidArgument {
                op: "gradcheck",
                reason: other.to_string(),
            },
        })
    }
}

/// Checks f64 gradients of `program` against double-double central
/// differences on every tensor in `ids`.
pub fn reference_check(
    program: &BatchLoss<'_>,
    ids: &[ParamId],
    samples: usize,
    seed: u64,
) -> Result<textgsl_autodiff::GradCheckReport, TensorError> {
    let mut store = program.model.store().clone();
    finite_diff_check_with_reference::<f64, DoubleDouble, _>(&mut store, ids, GRADCHECK_EPS, samples, seed, program)
}

fn toy_doc(id: &str, label: &str, tokens: &[&str], edges: &[(usize, usize, Relation)]) -> Result<TextGraph, ModelError> {
    let doc = Document {
        id: id.into(),
        label: label.into(),
        split: Split::Train,
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
    };
    let set: BTreeSet<TypedEdge> = edges
        .iter()
        .map(|&(src, dst, relation)| TypedEdge { src, dst, relation })
        .collect();
    assemble_graph(&doc, &doc.node_index(), &[&set]).map_err(|e| ModelError::Input(e.to_string()))
}

/// The two toy graphs: every relation, a parallel co/sem pair, a repeated
/// word and an isolated node.
pub fn toy_graphs() -> Result<Vec<TextGraph>, ModelError> {
    Ok(vec![
        toy_doc(
            "toy1",
            "a",
            &["the", "cat", "sat", "the", "mat"],
            &[
                (0, 1, Relation::Co),
                (1, 2, Relation::Co),
                (0, 2, Relation::Syn),
                (2, 3, Relation::Syn),
                (0, 1, Relation::Sem),
            ],
        )?,
        toy_doc(
            "toy2",
            "b",
            &["dogs", "bark", "dogs", "loudly"],
            &[(0, 1, Relation::Co), (1, 2, Relation::Sem)],
        )?,
    ])
}

/// Checks every parameter of a full-mode model (hidden width 4) on the toy
/// batch with dropout active under a fixed mask seed.
pub fn tiny_gradcheck(seed: u64) -> Result<GradcheckReport, ModelError> {
    const D: usize = 5;
    let spec = ModelSpec {
        config: ModelConfig {
            hidden: 4,
            ff_dim: 6,
            ..ModelConfig::default()
        },
        mode: Mode::Full,
        input_dim: D,
        classes: 3,
    };
    let model = TextGsl::<f64>::new(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let graphs = toy_graphs()?;
    let mut docs = Vec::new();
    for g in &graphs {
        let n = g.n_nodes() * D;
        let feats = Tensor::matrix(g.n_nodes(), D, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
        docs.push(DocInput::new(feats, g)?);
    }
    let program = BatchLoss {
        model: &model,
        batch: docs.into_iter().zip([0, 2]).collect(),
        train: true,
        mask_seed: seed.wrapping_add(1),
    };
    let ids: Vec<ParamId> = model.store().ids().collect();
    let full = reference_check(&program, &ids, 25, seed)?;
    let mut layers = Vec::new();
    for (layer, prefixes) in LAYERS {
        let checks: Vec<_> = full
            .params
            .iter()
            .filter(|p| prefixes.iter().any(|pre| p.name.starts_with(pre)))
            .collect();
        let worst = checks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("every layer has parameters");
        layers.push(LayerCheck {
            layer: layer.to_string(),
            tensors: checks.len(),
            coordinates: checks.iter().map(|c| c.coordinates).sum(),
            max_rel_error: worst.max_rel_error,
            worst_tensor: worst.name.clone(),
            passed: worst.max_rel_error < GRADCHECK_TOLERANCE,
        });
    }
    Ok(GradcheckReport {
        seed,
        reference: <DoubleDouble as Scalar>::type_name(),
        eps: GRADCHECK_EPS,
        tolerance: GRADCHECK_TOLERANCE,
        max_rel_error: full.max_rel_error,
        passed: layers.iter().all(|l| l.passed),
        layers,
    })
}

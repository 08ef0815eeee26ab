//! The graph-sequence classification network.
//!
//! Parameter names follow `branch.layer.name`:
//! `seq.*` (transformer), `str.*` (message passing), `fuse.*` (Bi-GRU),
//! `readout.*` and `cls.*`. Only the branches used by the model's
//! [`Mode`] are allocated.

pub mod config;
pub mod encoder;
pub mod fusion;
pub mod layers;
pub mod mpnn;
pub mod pass;
pub mod readout;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textgsl_autodiff::{
    read_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader, ParamId, ParamStore, Scalar, Tape,
    Tensor, TensorError, Var,
};
use thiserror::Error;

pub use config::{Activation, Mode, ModelConfig, ModelSpec};
pub use encoder::EncoderParams;
pub use fusion::FusionParams;
pub use layers::ParamBuilder;
pub use mpnn::{MpnnParams, StepTrace, Topology};
pub use pass::Pass;
pub use readout::{Readout, ReadoutParams};

use crate::graph::{Relation, TextGraph};

pub const DEFAULT_DROPOUT_SEQ: f64 = 0.65;
pub const DEFAULT_DROPOUT_STR: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("model input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One document ready for the network: node features (`n_node × D`, one
/// row per unique word) and the graph layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DocInput<T> {
    pub features: Tensor<T>,
    pub topology: Topology,
}

impl<T: Scalar> DocInput<T> {
    pub fn new(features: Tensor<T>, graph: &TextGraph) -> Result<Self, ModelError> {
        if features.rows() != graph.n_nodes() {
            return Err(ModelError::Input(format!(
                "{}: {} feature rows for {} nodes",
                graph.doc_id,
                features.rows(),
                graph.n_nodes()
            )));
        }
        if graph.n_tokens() == 0 {
            return Err(ModelError::Input(format!("{}: empty document", graph.doc_id)));
        }
        Ok(Self {
            features,
            topology: Topology::from_graph(graph),
        })
    }

    pub fn cast<U: Scalar>(&self) -> DocInput<U> {
        DocInput {
            features: self.features.cast(),
            topology: self.topology.clone(),
        }
    }
}

/// Tape handles of the intermediate results of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Sequence features per token, absent in `no-LSL` mode.
    pub x_seq: Option<Var>,
    /// Structure features scattered to tokens, absent in `no-DSL` mode.
    pub x_str: Option<Var>,
    pub x_out: Var,
    pub steps: Vec<StepTrace>,
    pub readout: Readout,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub encoder: Option<EncoderParams>,
    pub mpnn: Option<MpnnParams>,
    pub fusion: FusionParams,
    pub readout: ReadoutParams,
}

impl Layout {
    fn build<T: Scalar>(spec: &ModelSpec, b: &mut ParamBuilder<'_, T>) -> Result<Self, TensorError> {
        let c = &spec.config;
        let encoder = if spec.mode.uses_sequence() {
            let mut e = EncoderParams::new(
                b,
                spec.input_dim,
                c.hidden,
                c.ff_dim,
                c.encoder_layers,
                c.heads,
                c.positional_encoding,
            )?;
            e.dropout = DEFAULT_DROPOUT_SEQ;
            Some(e)
        } else {
            None
        };
        let mpnn = if spec.mode.uses_structure() {
            let mut m = MpnnParams::new(b, spec.input_dim, c.hidden, c.mpnn_steps, c.message_activation)?;
            m.dropout = DEFAULT_DROPOUT_STR;
            Some(m)
        } else {
            None
        };
        let branches = usize::from(encoder.is_some()) + usize::from(mpnn.is_some());
        let fusion = FusionParams::new(b, branches * c.hidden, c.hidden)?;
        let readout = ReadoutParams::new(b, c.hidden, spec.classes)?;
        Ok(Self {
            encoder,
            mpnn,
            fusion,
            readout,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGsl<T> {
    spec: ModelSpec,
    layout: Layout,
    store: ParamStore<T>,
}

impl<T: Scalar> TextGsl<T> {
    /// Fresh model with parameters initialized from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate().map_err(ModelError::Config)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::build(
            &spec,
            &mut ParamBuilder {
                store: &mut store,
                rng: &mut rng,
            },
        )?;
        Ok(Self { spec, layout, store })
    }

    /// The same network with parameters (and gradients) converted to `U`.
    pub fn cast<U: Scalar>(&self) -> TextGsl<U> {
        TextGsl {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            store: self.store.cast(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Sets the training-time dropout rates of the sequence and structure branches.
    pub fn set_dropout(&mut self, seq: f64, str_: f64) -> Result<(), ModelError> {
        for p in [seq, str_] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::Config(format!("dropout rate {p} outside [0, 1)")));
            }
        }
        if let Some(e) = self.layout.encoder.as_mut() {
            e.dropout = seq;
        }
        if let Some(m) = self.layout.mpnn.as_mut() {
            m.dropout = str_;
        }
        Ok(())
    }

    /// Records one document's forward computation on `pass`.
    pub fn forward_doc(&self, pass: &mut Pass<'_, T>, doc: &DocInput<T>) -> Result<ForwardTrace, ModelError> {
        let d = self.spec.input_dim;
        if doc.features.cols() != d {
            return Err(ModelError::Input(format!(
                "feature width {} does not match model input width {d}",
                doc.features.cols()
            )));
        }
        let topo = &doc.topology;
        if topo.n_tokens() == 0 {
            return Err(ModelError::Input("document has no tokens".into()));
        }
        let feats = pass.tape.constant(doc.features.clone());
        let mut branches = Vec::with_capacity(2);
        let mut x_seq = None;
        if let Some(enc) = &self.layout.encoder {
            let nodes = enc.input.apply(pass, feats)?;
            let tokens = fusion::scatter_to_tokens(pass, nodes, &topo.token_nodes)?;
            let x = encoder::encode_projected(pass, enc, tokens)?;
            x_seq = Some(x);
            branches.push(x);
        }
        let mut x_str = None;
        let mut steps = Vec::new();
        if let Some(mp) = &self.layout.mpnn {
            let (nodes, st) = mpnn::structural_branch(pass, feats, topo, mp)?;
            let x = fusion::scatter_to_tokens(pass, nodes, &topo.token_nodes)?;
            x_str = Some(x);
            steps = st;
            branches.push(x);
        }
        let x_out = fusion::fuse(pass, &self.layout.fusion, &branches)?;
        let ro = readout::readout(pass, &self.layout.readout, x_out)?;
        let (logits, probs) = readout::classify(pass, &self.layout.readout, ro.x_g)?;
        Ok(ForwardTrace {
            x_seq,
            x_str,
            x_out,
            steps,
            readout: ro,
            logits,
            probs,
        })
    }

    /// Mean cross-entropy over a batch of `(document, label)` pairs.
    pub fn batch_loss(&self, pass: &mut Pass<'_, T>, batch: &[(&DocInput<T>, usize)]) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let mut total: Option<Var> = None;
        for &(doc, label) in batch {
            if label >= self.spec.classes {
                return Err(ModelError::Input(format!(
                    "label {label} out of range for {} classes",
                    self.spec.classes
                )));
            }
            let tr = self.forward_doc(pass, doc)?;
            let l = readout::cross_entropy(pass, tr.probs, label)?;
            total = Some(match total {
                Some(acc) => pass.tape.add(acc, l)?,
                None => l,
            });
        }
        let total = total.expect("nonempty batch");
        Ok(pass.tape.affine(total, T::lit(1.0 / batch.len() as f64), T::zero())?)
    }

    /// Class probabilities in evaluation mode.
    pub fn predict_proba(&self, doc: &DocInput<T>) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pass = Pass::new(&mut tape, &self.store, false, &mut rng);
        let tr = self.forward_doc(&mut pass, doc)?;
        Ok(tape.value(tr.probs).data().to_vec())
    }

    /// Index of the most probable class (first one on ties).
    pub fn predict(&self, doc: &DocInput<T>) -> Result<usize, ModelError> {
        let p = self.predict_proba(doc)?;
        let mut best = 0;
        for (k, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = k;
            }
        }
        Ok(best)
    }

    /// Raw relation weights `(relation, γ)`, empty without the structure branch.
    pub fn gammas(&self) -> Vec<(Relation, f64)> {
        match &self.layout.mpnn {
            Some(m) => Relation::ALL
                .iter()
                .map(|&r| (r, self.store.value(m.gamma[r.index()]).item().as_f64()))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn param(&self, name: &str) -> Result<ParamId, TensorError> {
        self.store.id(name)
    }

    /// Writes the parameters with the model spec and `extra` fields in the header.
    pub fn save(&self, path: &Path, step: u64, extra: serde_json::Value) -> Result<(), ModelError> {
        let f = File::create(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let hyper = serde_json::json!({ "model": self.spec, "extra": extra });
        write_checkpoint(BufWriter::new(f), &self.store, step, hyper)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader), ModelError> {
        let f = File::open(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let (header, stored) = read_checkpoint::<T, _>(BufReader::new(f))?;
        let spec: ModelSpec = serde_json::from_value(header.hyperparameters["model"].clone())
            .map_err(|e| ModelError::Config(format!("checkpoint model spec: {e}")))?;
        let mut model = Self::new(spec, 0)?;
        model.copy_params_from(&stored)?;
        Ok((model, header))
    }

    /// Replaces every parameter value with the same-named one from `other`.
    pub fn copy_params_from(&mut self, other: &ParamStore<T>) -> Result<(), ModelError> {
        if other.len() != self.store.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, found {}",
                self.store.len(),
                other.len()
            )));
        }
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.get(id).name.clone();
            let src = other.value(other.id(&name)?);
            if src.shape() != self.store.value(id).shape() {
                return Err(ModelError::Config(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    self.store.value(id).shape()
                )));
            }
            *self.store.value_mut(id) = src.clone();
        }
        Ok(())
    }
}

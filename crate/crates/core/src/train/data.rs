//! Documents joined with their graphs and a shared word-vector bank.

use std::collections::{BTreeMap, HashMap};

use textgsl_autodiff::{Scalar, Tensor};

use super::TrainError;
use crate::corpus::{Document, LabelSpace, Split};
use crate::embeddings::EmbeddingTable;
use crate::graph::TextGraph;
use crate::model::{DocInput, Topology};

/// One vector per distinct word across all graphs, so documents only keep
/// row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank<T> {
    dim: usize,
    rows: Vec<T>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> FeatureBank<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Row of `word`, looked up in `table` the first time it is seen.
    pub fn intern(&mut self, word: &str, table: &EmbeddingTable) -> usize {
        if let Some(&k) = self.index.get(word) {
            return k;
        }
        let k = self.index.len();
        self.rows.extend(table.lookup(word).into_iter().map(T::lit));
        self.index.insert(word.to_string(), k);
        k
    }

    pub fn matrix(&self, rows: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(&self.rows[r * self.dim..(r + 1) * self.dim]);
        }
        Tensor::matrix(rows.len(), self.dim, data).expect("bank rows")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc_id: String,
    pub split: Split,
    pub label: usize,
    pub bank_rows: Vec<usize>,
    pub topology: Topology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub bank: FeatureBank<T>,
    pub examples: Vec<Example>,
    pub labels: LabelSpace,
}

impl<T: Scalar> Dataset<T> {
    /// Joins graphs with documents by id; the split comes from the
    /// document and the label must exist in `labels`.
    pub fn build(
        docs: &[Document],
        graphs: &[TextGraph],
        table: &EmbeddingTable,
        labels: LabelSpace,
    ) -> Result<Self, TrainError> {
        let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut bank = FeatureBank::new(table.dim());
        let mut examples = Vec::with_capacity(graphs.len());
        for g in graphs {
            let doc = by_id
                .get(g.doc_id.as_str())
                .ok_or_else(|| TrainError::Data(format!("graph `{}` has no document record", g.doc_id)))?;
            let label = labels
                .index_of(&doc.label)
                .ok_or_else(|| TrainError::Data(format!("`{}`: unknown label `{}`", g.doc_id, doc.label)))?;
            if g.n_tokens() == 0 {
                return Err(TrainError::Data(format!("`{}`: empty graph", g.doc_id)));
            }
            let bank_rows = g.nodes.iter().map(|w| bank.intern(w, table)).collect();
            examples.push(Example {
                doc_id: g.doc_id.clone(),
                split: doc.split,
                label,
                bank_rows,
                topology: Topology::from_graph(g),
            });
        }
        Ok(Self { bank, examples, labels })
    }

    pub fn input(&self, k: usize) -> DocInput<T> {
        let e = &self.examples[k];
        DocInput {
            features: self.bank.matrix(&e.bank_rows),
            topology: e.topology.clone(),
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len())
            .filter(|&k| self.examples[k].split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }

    pub fn input_dim(&self) -> usize {
        self.bank.dim()
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }
}

impl<T: Scalar> Dataset<T> {
    /// Re-tags a seeded `round(ratio × |train|)` subset of training examples as validation.
    pub fn carve_validation(&mut self, ratio: f64, seed: u64) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut train: Vec<usize> = (0..self.examples.len())
            .filter(|&k| self.examples[k].split == Split::Train)
            .collect();
        let k = crate::corpus::validation_count(train.len(), ratio);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        train.shuffle(&mut rng);
        for &i in &train[..k] {
            self.examples[i].split = Split::Val;
        }
    }

    /// Keeps `⌊ratio × |train|⌋` training examples chosen by a seeded draw,
    /// in their original order; other splits are untouched. A ratio of 1
    /// returns the dataset unchanged.
    pub fn subsample_train(&self, ratio: f64, seed: u64) -> Result<Self, TrainError>
    where
        T: Clone,
    {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(TrainError::Config(format!("training ratio {ratio} outside (0, 1]")));
        }
        if ratio == 1.0 {
            return Ok(self.clone());
        }
        use rand::SeedableRng;
        let train: Vec<usize> = (0..self.examples.len())
            .filter(|&k| self.examples[k].split == Split::Train)
            .collect();
        let keep_n = subsample_count(train.len(), ratio);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, train.len(), keep_n)
            .into_iter()
            .map(|i| train[i])
            .collect();
        picked.sort_unstable();
        let mut keep = vec![true; self.examples.len()];
        for &k in &train {
            keep[k] = false;
        }
        for k in picked {
            keep[k] = true;
        }
        Ok(Self {
            bank: self.bank.clone(),
            examples: self
                .examples
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(e, _)| e.clone())
                .collect(),
            labels: self.labels.clone(),
        })
    }
}

pub fn subsample_count(train: usize, ratio: f64) -> usize {
    // Guards products such as 0.3 × 10 that land just below an integer.
    ((ratio * train as f64 + 1e-9).floor() as usize).min(train)
}

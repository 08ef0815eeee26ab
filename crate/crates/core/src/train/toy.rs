//! Seeded two-topic corpus for smoke tests and capacity checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textgsl_autodiff::Scalar;

use super::{Dataset, TrainError};
use crate::corpus::{Document, LabelSpace, Split};
use crate::embeddings::EmbeddingTable;
use crate::graph::{GraphBuilder, TextGraph};

const SPORTS: [&str; 10] = [
    "goal", "match", "team", "coach", "league", "score", "striker", "season", "stadium", "referee",
];
const FINANCE: [&str; 10] = [
    "stock", "market", "profit", "bank", "shares", "dividend", "investor", "quarter", "earnings", "merger",
];
const FILLER: [&str; 6] = ["report", "week", "news", "people", "today", "city"];

/// `n_train` training and `n_test` test documents alternating between the
/// labels `finance` and `sports`. Each has 5 to 10 tokens, mostly drawn
/// from its topic list with some shared filler words.
pub fn toy_documents(n_train: usize, n_test: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_train + n_test)
        .map(|k| {
            let (label, topic) = if k % 2 == 0 { ("sports", &SPORTS) } else { ("finance", &FINANCE) };
            let len = rng.gen_range(5..=10);
            let tokens = (0..len)
                .map(|_| {
                    let pool: &[&str] = if rng.gen_bool(0.25) { &FILLER } else { topic };
                    pool.choose(&mut rng).expect("non-empty word list").to_string()
                })
                .collect();
            Document {
                id: format!("toy{k:03}"),
                label: label.into(),
                split: if k < n_train { Split::Train } else { Split::Test },
                tokens,
            }
        })
        .collect()
}

/// Random vectors in `[-1, 1]^dim` for every word of the toy vocabulary.
pub fn toy_embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut table = EmbeddingTable::new(dim, seed);
    for w in SPORTS.iter().chain(&FINANCE).chain(&FILLER) {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        table.insert(w, &v);
    }
    table
}

pub fn toy_graphs(docs: &[Document], table: &EmbeddingTable) -> Result<Vec<TextGraph>, TrainError> {
    docs.iter()
        .map(|d| {
            GraphBuilder::default()
                .build(d, table, None)
                .map_err(|e| TrainError::Data(e.to_string()))
        })
        .collect()
}

pub fn toy_dataset<T: Scalar>(n_train: usize, n_test: usize, dim: usize, seed: u64) -> Result<Dataset<T>, TrainError> {
    let docs = toy_documents(n_train, n_test, seed);
    let table = toy_embeddings(dim, seed);
    let graphs = toy_graphs(&docs, &table)?;
    Dataset::build(&docs, &graphs, &table, LabelSpace::from_docs(&docs))
}

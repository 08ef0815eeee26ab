#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textgsl::graph::{Relation, TextGraph, TypedEdge};
use textgsl::model::{ModelConfig, ModelSpec, Mode};
use textgsl_autodiff::Tensor;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Graph over `tokens` (words repeat by equality) with the given
/// undirected typed edges between node indices.
pub fn toy_graph(tokens: &[&str], edges: &[(usize, usize, Relation)]) -> TextGraph {
    let mut nodes: Vec<String> = Vec::new();
    let mut positions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (p, t) in tokens.iter().enumerate() {
        let k = match nodes.iter().position(|n| n == t) {
            Some(k) => k,
            None => {
                nodes.push(t.to_string());
                nodes.len() - 1
            }
        };
        positions.entry(k).or_default().push(p);
    }
    let mut all = std::collections::BTreeSet::new();
    for &(a, b, relation) in edges {
        all.insert(TypedEdge { src: a, dst: b, relation });
        all.insert(TypedEdge { src: b, dst: a, relation });
    }
    let g = TextGraph {
        doc_id: "toy".into(),
        label: "x".into(),
        nodes,
        positions,
        edges: all.into_iter().collect(),
    };
    g.validate().unwrap();
    g
}

/// Four nodes, five tokens, all three relations, one parallel pair.
pub fn four_node_graph() -> TextGraph {
    toy_graph(
        &["a", "b", "c", "a", "d"],
        &[
            (0, 1, Relation::Co),
            (1, 2, Relation::Co),
            (0, 2, Relation::Syn),
            (2, 3, Relation::Syn),
            (0, 1, Relation::Sem),
        ],
    )
}

pub fn tiny_spec(mode: Mode, input_dim: usize, classes: usize) -> ModelSpec {
    ModelSpec {
        config: ModelConfig {
            hidden: 4,
            ff_dim: 6,
            ..ModelConfig::default()
        },
        mode,
        input_dim,
        classes,
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

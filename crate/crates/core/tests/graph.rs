mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use textgsl::corpus::{Document, Split};
use textgsl::embeddings::EmbeddingTable;
use textgsl::graph::{
    assemble_graph, build_cooccurrence_edges, deserialize_graph, read_graphs, semantic_edges_from_vectors,
    serialize_graph, write_graphs, GraphBuilder, Relation, TextGraph, TypedEdge,
};

fn doc(tokens: &[String]) -> Document {
    Document {
        id: "d".into(),
        label: "x".into(),
        split: Split::Train,
        tokens: tokens.to_vec(),
    }
}

fn words(ids: &[u8]) -> Vec<String> {
    ids.iter().map(|i| format!("w{i}")).collect()
}

fn pairs(set: &BTreeSet<TypedEdge>) -> BTreeSet<(usize, usize)> {
    set.iter().map(|e| (e.src, e.dst)).collect()
}

/// Every distinct pair inside any run of `window` consecutive tokens.
fn cooccurrence_oracle(tokens: &[String], window: usize) -> BTreeSet<(usize, usize)> {
    let index = textgsl::corpus::NodeIndex::from_tokens(tokens);
    let mut out = BTreeSet::new();
    let last = tokens.len().saturating_sub(window);
    for start in 0..=last {
        let end = (start + window).min(tokens.len());
        for a in start..end {
            for b in start..end {
                let (i, j) = (index.token_nodes[a], index.token_nodes[b]);
                if i != j {
                    out.insert((i, j));
                }
            }
        }
    }
    out
}

/// cos(a, b) ≥ p/q decided in exact integer arithmetic.
fn semantic_oracle(vectors: &[Vec<i64>], p: i128, q: i128) -> BTreeSet<(usize, usize)> {
    let sq = |v: &[i64]| v.iter().map(|&x| (x * x) as i128).sum::<i128>();
    let mut out = BTreeSet::new();
    for i in 0..vectors.len() {
        for j in 0..vectors.len() {
            let (a, b) = (&vectors[i], &vectors[j]);
            if i == j || sq(a) == 0 || sq(b) == 0 {
                continue;
            }
            let dot: i128 = a.iter().zip(b).map(|(&x, &y)| (x * y) as i128).sum();
            if dot > 0 && dot * dot * q * q >= p * p * sq(a) * sq(b) {
                out.insert((i, j));
            }
        }
    }
    out
}

fn to_f64(vectors: &[Vec<i64>]) -> Vec<Vec<f64>> {
    vectors.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect()
}

#[test]
fn five_random_unit_vectors_match_all_pairs() {
    use rand::Rng;
    let mut rng = support::seeded(5);
    let mut vectors: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    vectors.push(vectors[0].iter().map(|x| x * 0.999 + 0.001).collect());
    let (set, skipped) = semantic_edges_from_vectors(&vectors, 0.9).unwrap();
    assert_eq!(skipped, 0);
    let mut expected = BTreeSet::new();
    for i in 0..vectors.len() {
        for j in 0..vectors.len() {
            let c = textgsl::embeddings::cosine(&vectors[i], &vectors[j]).unwrap();
            if i != j && c >= 0.9 {
                expected.insert((i, j));
            }
        }
    }
    assert!(expected.contains(&(0, 5)));
    assert_eq!(pairs(&set), expected);
}

#[test]
fn zero_vectors_are_skipped_and_counted() {
    let (set, skipped) = semantic_edges_from_vectors(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]], 0.5).unwrap();
    assert_eq!(skipped, 2);
    assert_eq!(pairs(&set), BTreeSet::from([(1, 2), (2, 1)]));
    assert!(semantic_edges_from_vectors(&[], 1.0).is_err());
    assert!(semantic_edges_from_vectors(&[], 0.0).is_err());
}

#[test]
fn builder_merges_all_relations_symmetrically() {
    let mut table = EmbeddingTable::new(2, 0);
    table.insert("cat", &[1.0, 0.0]);
    table.insert("kitten", &[0.99, 0.05]);
    table.insert("sat", &[0.0, 1.0]);
    table.insert("far", &[-1.0, 0.0]);
    let d = doc(&["cat", "sat", "far", "kitten"].map(String::from));
    let g = GraphBuilder::default().build(&d, &table, None).unwrap();
    let co: BTreeSet<_> = g.edges_of(Relation::Co).map(|e| (e.src, e.dst)).collect();
    let sem: BTreeSet<_> = g.edges_of(Relation::Sem).map(|e| (e.src, e.dst)).collect();
    assert_eq!(co, BTreeSet::from([(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2)]));
    assert_eq!(sem, BTreeSet::from([(0, 3), (3, 0)]));
    assert_eq!(g.edges_of(Relation::Syn).count(), 0);
    assert_eq!(g.adjacency()[0][3], 1);
    assert_eq!(g.adjacency()[0][0], 0);
}

#[test]
fn thousand_graphs_serialize_to_thousand_lines() {
    let table = EmbeddingTable::new(4, 3);
    let graphs: Vec<TextGraph> = (0..1000)
        .map(|k| {
            let mut d = doc(&words(&[(k % 7) as u8, 1, 2, (k % 5) as u8]));
            d.id = format!("doc{k}");
            GraphBuilder::default().build(&d, &table, None).unwrap()
        })
        .collect();
    let mut buf = Vec::new();
    write_graphs(&mut buf, &graphs).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1000);
    assert_eq!(read_graphs(text.as_bytes()).unwrap(), graphs);
}

#[test]
fn missing_edges_field_is_named() {
    let err = deserialize_graph(r#"{"doc_id":"a","label":"x","nodes":["a"],"positions":{"0":[0]}}"#).unwrap_err();
    assert!(err.to_string().contains("edges"), "{err}");
}

fn int_vectors() -> impl Strategy<Value = Vec<Vec<i64>>> {
    (2usize..=4).prop_flat_map(|dim| prop::collection::vec(prop::collection::vec(-3i64..=3, dim), 0..=50))
}

fn token_ids() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..8, 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semantic_edges_equal_exact_all_pairs(vectors in int_vectors(), t in 0usize..3) {
        // Thresholds whose numerators share no factor with any achievable
        // dot product, so no pair sits exactly on the boundary.
        let (p, q) = [(8765, 10000), (6543, 10000), (3217, 10000)][t];
        let (set, _) = semantic_edges_from_vectors(&to_f64(&vectors), p as f64 / q as f64).unwrap();
        prop_assert_eq!(pairs(&set), semantic_oracle(&vectors, p, q));
        prop_assert!(set.iter().all(|e| e.relation == Relation::Sem));
    }

    #[test]
    fn semantic_edges_shrink_as_threshold_rises(vectors in int_vectors(), lo in 0.05f64..0.95, gap in 0.0f64..0.5) {
        let hi = (lo + gap).min(0.99);
        let f = to_f64(&vectors);
        let (strict, _) = semantic_edges_from_vectors(&f, hi).unwrap();
        let (loose, _) = semantic_edges_from_vectors(&f, lo).unwrap();
        prop_assert!(strict.is_subset(&loose));
    }

    #[test]
    fn cooccurrence_matches_window_enumeration(ids in token_ids(), window in 2usize..6) {
        let tokens = words(&ids);
        let index = doc(&tokens).node_index();
        let set = build_cooccurrence_edges(&index, window).unwrap();
        prop_assert_eq!(pairs(&set), cooccurrence_oracle(&tokens, window));
        let wider = build_cooccurrence_edges(&index, window + 1).unwrap();
        prop_assert!(set.is_subset(&wider));
    }

    #[test]
    fn assembled_graphs_are_symmetric_and_round_trip(ids in token_ids(), window in 2usize..5, seed in 0u64..50) {
        let d = doc(&words(&ids));
        let mut table = EmbeddingTable::new(3, seed);
        table.insert("w0", &[1.0, 0.0, 0.0]);
        table.insert("w1", &[1.0, 0.01, 0.0]);
        let builder = GraphBuilder { window, sem_threshold: 0.5 };
        let g = builder.build(&d, &table, None).unwrap();
        let edges: BTreeSet<_> = g.edges.iter().copied().collect();
        prop_assert_eq!(edges.len(), g.edges.len());
        for e in &g.edges {
            prop_assert!(e.src != e.dst);
            let back = TypedEdge { src: e.dst, dst: e.src, relation: e.relation };
            prop_assert!(edges.contains(&back));
        }
        let line = serialize_graph(&g);
        prop_assert_eq!(&deserialize_graph(&line).unwrap(), &g);
        let again = builder.build(&d, &table, None).unwrap();
        prop_assert_eq!(serialize_graph(&again), line);
        let index = d.node_index();
        let rebuilt = assemble_graph(&d, &index, &[&edges]).unwrap();
        prop_assert_eq!(rebuilt, g);
    }
}

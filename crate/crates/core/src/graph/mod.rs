//! Per-document text graphs with co-occurrence, syntax and semantic edges.
//!
//! Nodes are the unique words of a document in first-occurrence order.
//! Every undirected relation is stored as two directed [`TypedEdge`]s, and
//! a word pair linked by several relations keeps one edge pair per relation.

pub mod conllu;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{normalize_token, Document, NodeIndex};
use crate::embeddings::{cosine, EmbeddingTable};
pub use conllu::{parse_conllu, ParseToken, ParsedDocument};

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_SEM_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("window must be at least 2, got {0}")]
    Window(usize),
    #[error("semantic threshold must lie strictly between 0 and 1, got {0}")]
    Threshold(f64),
    #[error("field `{field}`: {reason}")]
    Schema { field: &'static str, reason: String },
    #[error("invalid graph record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("graph line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<GraphError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Co,
    Syn,
    Sem,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Co, Relation::Syn, Relation::Sem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Co => "co",
            Relation::Syn => "syn",
            Relation::Sem => "sem",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Directed typed edge. Node `src` aggregates messages from node `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

fn both_ways(set: &mut BTreeSet<TypedEdge>, a: usize, b: usize, relation: Relation) {
    set.insert(TypedEdge { src: a, dst: b, relation });
    set.insert(TypedEdge { src: b, dst: a, relation });
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextGraph {
    pub doc_id: String,
    pub label: String,
    pub nodes: Vec<String>,
    /// Token positions of each node, keyed by node index.
    pub positions: BTreeMap<usize, Vec<usize>>,
    /// Sorted, deduplicated and symmetric.
    pub edges: Vec<TypedEdge>,
}

impl TextGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.positions.values().map(Vec::len).sum()
    }

    /// Node index of every token position.
    pub fn token_nodes(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_tokens()];
        for (&node, ps) in &self.positions {
            for &p in ps {
                out[p] = node;
            }
        }
        out
    }

    /// Binary adjacency: 1 where any relation links the pair.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.n_nodes();
        let mut a = vec![vec![0u8; n]; n];
        for e in &self.edges {
            a[e.src][e.dst] = 1;
        }
        a
    }

    pub fn edges_of(&self, relation: Relation) -> impl Iterator<Item = &TypedEdge> {
        self.edges.iter().filter(move |e| e.relation == relation)
    }

    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(GraphError::Schema {
                field: "nodes",
                reason: "graph has no nodes".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return Err(GraphError::Schema {
                    field: "edges",
                    reason: format!("edge ({}, {}) references a missing node", e.src, e.dst),
                });
            }
            if e.src == e.dst {
                return Err(GraphError::Schema {
                    field: "edges",
                    reason: format!("self-loop on node {}", e.src),
                });
            }
            if !seen.insert(*e) {
                return Err(GraphError::Schema {
                    field: "edges",
                    reason: format!("duplicate edge ({}, {}, {})", e.src, e.dst, e.relation),
                });
            }
        }
        for e in &self.edges {
            let rev = TypedEdge {
                src: e.dst,
                dst: e.src,
                relation: e.relation,
            };
            if !seen.contains(&rev) {
                return Err(GraphError::Schema {
                    field: "edges",
                    reason: format!("edge ({}, {}, {}) has no reverse", e.src, e.dst, e.relation),
                });
            }
        }
        if self.positions.len() != n || self.positions.keys().any(|&k| k >= n) {
            return Err(GraphError::Schema {
                field: "positions",
                reason: "every node needs exactly one position list".into(),
            });
        }
        let total = self.n_tokens();
        let mut covered = vec![false; total];
        for ps in self.positions.values() {
            if ps.is_empty() {
                return Err(GraphError::Schema {
                    field: "positions",
                    reason: "node without token positions".into(),
                });
            }
            for &p in ps {
                if p >= total || covered[p] {
                    return Err(GraphError::Schema {
                        field: "positions",
                        reason: format!("positions do not partition 0..{total}"),
                    });
                }
                covered[p] = true;
            }
        }
        Ok(())
    }
}

/// Links every pair of distinct words that share a sliding window of
/// `window` consecutive tokens.
pub fn build_cooccurrence_edges(index: &NodeIndex, window: usize) -> Result<BTreeSet<TypedEdge>, GraphError> {
    if window < 2 {
        return Err(GraphError::Window(window));
    }
    let toks = &index.token_nodes;
    let mut set = BTreeSet::new();
    for i in 0..toks.len() {
        for j in i + 1..(i + window).min(toks.len()) {
            if toks[i] != toks[j] {
                both_ways(&mut set, toks[i], toks[j], Relation::Co);
            }
        }
    }
    Ok(set)
}

/// Maps each parse token to a surviving token position by in-order surface
/// matching. `None` when some surviving token cannot be matched.
pub fn align_parse<S: AsRef<str>>(tokens: &[S], parse: &ParsedDocument) -> Option<Vec<Option<usize>>> {
    let mut next = 0;
    let mut map = Vec::with_capacity(parse.tokens.len());
    for pt in &parse.tokens {
        if next < tokens.len() && normalize_token(&pt.form) == tokens[next].as_ref() {
            map.push(Some(next));
            next += 1;
        } else {
            map.push(None);
        }
    }
    (next == tokens.len()).then_some(map)
}

/// Syntax edges from dependency arcs whose endpoints both survived
/// preprocessing. An unalignable parse yields no edges and a warning.
pub fn build_syntax_edges(doc: &Document, index: &NodeIndex, parse: &ParsedDocument) -> BTreeSet<TypedEdge> {
    let mut set = BTreeSet::new();
    let Some(map) = align_parse(&doc.tokens, parse) else {
        log::warn!("document {}: dependency parse does not align with its tokens; no syntax edges", doc.id);
        return set;
    };
    for (k, pt) in parse.tokens.iter().enumerate() {
        if pt.head == 0 || pt.head > parse.tokens.len() {
            continue;
        }
        if let (Some(dep), Some(head)) = (map[k], map[pt.head - 1]) {
            let (a, b) = (index.token_nodes[dep], index.token_nodes[head]);
            if a != b {
                both_ways(&mut set, a, b, Relation::Syn);
            }
        }
    }
    set
}

/// Semantic edges between node vectors with cosine similarity at least
/// `threshold`. Returns the edges and the number of pairs skipped because
/// a vector had zero norm.
pub fn semantic_edges_from_vectors(
    vectors: &[Vec<f64>],
    threshold: f64,
) -> Result<(BTreeSet<TypedEdge>, usize), GraphError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GraphError::Threshold(threshold));
    }
    let mut set = BTreeSet::new();
    let mut skipped = 0;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            match cosine(&vectors[i], &vectors[j]) {
                Some(c) if c >= threshold => both_ways(&mut set, i, j, Relation::Sem),
                Some(_) => {}
                None => skipped += 1,
            }
        }
    }
    Ok((set, skipped))
}

pub fn build_semantic_edges(
    index: &NodeIndex,
    table: &EmbeddingTable,
    threshold: f64,
) -> Result<BTreeSet<TypedEdge>, GraphError> {
    let vectors: Vec<Vec<f64>> = index.nodes.iter().map(|w| table.lookup(w)).collect();
    let (set, skipped) = semantic_edges_from_vectors(&vectors, threshold)?;
    if skipped > 0 {
        log::warn!("{skipped} word pairs skipped: zero-norm embedding");
    }
    Ok(set)
}

/// Merges edge sets into a graph. Edges are sorted by `(src, dst, relation)`.
pub fn assemble_graph(
    doc: &Document,
    index: &NodeIndex,
    edge_sets: &[&BTreeSet<TypedEdge>],
) -> Result<TextGraph, GraphError> {
    let mut all = BTreeSet::new();
    for s in edge_sets {
        for e in s.iter() {
            both_ways(&mut all, e.src, e.dst, e.relation);
        }
    }
    let graph = TextGraph {
        doc_id: doc.id.clone(),
        label: doc.label.clone(),
        nodes: index.nodes.clone(),
        positions: index.positions().into_iter().enumerate().collect(),
        edges: all.into_iter().collect(),
    };
    graph.validate()?;
    Ok(graph)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphBuilder {
    pub window: usize,
    pub sem_threshold: f64,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            sem_threshold: DEFAULT_SEM_THRESHOLD,
        }
    }
}

impl GraphBuilder {
    pub fn build(
        &self,
        doc: &Document,
        table: &EmbeddingTable,
        parse: Option<&ParsedDocument>,
    ) -> Result<TextGraph, GraphError> {
        let index = doc.node_index();
        let co = build_cooccurrence_edges(&index, self.window)?;
        let syn = parse
            .map(|p| build_syntax_edges(doc, &index, p))
            .unwrap_or_default();
        let sem = build_semantic_edges(&index, table, self.sem_threshold)?;
        assemble_graph(doc, &index, &[&co, &syn, &sem])
    }
}

#[derive(Serialize)]
struct GraphRecordOut<'a> {
    doc_id: &'a str,
    label: &'a str,
    nodes: &'a [String],
    positions: &'a BTreeMap<usize, Vec<usize>>,
    edges: Vec<(usize, usize, Relation)>,
}

pub fn serialize_graph(graph: &TextGraph) -> String {
    let rec = GraphRecordOut {
        doc_id: &graph.doc_id,
        label: &graph.label,
        nodes: &graph.nodes,
        positions: &graph.positions,
        edges: graph.edges.iter().map(|e| (e.src, e.dst, e.relation)).collect(),
    };
    serde_json::to_string(&rec).expect("graph record serializes")
}

fn field<T: serde::de::DeserializeOwned>(obj: &serde_json::Map<String, Value>, name: &'static str) -> Result<T, GraphError> {
    let v = obj.get(name).ok_or(GraphError::Schema {
        field: name,
        reason: "missing".into(),
    })?;
    serde_json::from_value(v.clone()).map_err(|e| GraphError::Schema {
        field: name,
        reason: e.to_string(),
    })
}

pub fn deserialize_graph(record: &str) -> Result<TextGraph, GraphError> {
    let v: Value = serde_json::from_str(record)?;
    let obj = v.as_object().ok_or(GraphError::Schema {
        field: "record",
        reason: "not a JSON object".into(),
    })?;
    let positions: BTreeMap<String, Vec<usize>> = field(obj, "positions")?;
    let positions = positions
        .into_iter()
        .map(|(k, ps)| {
            k.parse::<usize>().map(|k| (k, ps)).map_err(|_| GraphError::Schema {
                field: "positions",
                reason: format!("key `{k}` is not a node index"),
            })
        })
        .collect::<Result<_, _>>()?;
    let edges: Vec<(usize, usize, Relation)> = field(obj, "edges")?;
    let graph = TextGraph {
        doc_id: field(obj, "doc_id")?,
        label: field(obj, "label")?,
        nodes: field(obj, "nodes")?,
        positions,
        edges: edges
            .into_iter()
            .map(|(src, dst, relation)| TypedEdge { src, dst, relation })
            .collect(),
    };
    graph.validate()?;
    let mut sorted = graph.edges.clone();
    sorted.sort();
    if sorted != graph.edges {
        return Err(GraphError::Schema {
            field: "edges",
            reason: "edges not sorted by (src, dst, relation)".into(),
        });
    }
    Ok(graph)
}

pub fn write_graphs<W: Write>(mut out: W, graphs: &[TextGraph]) -> io::Result<()> {
    for g in graphs {
        out.write_all(serialize_graph(g).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_graphs<R: BufRead>(input: R) -> Result<Vec<TextGraph>, GraphError> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(deserialize_graph(&line).map_err(|e| GraphError::Line {
            line: k + 1,
            source: Box::new(e),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn doc(tokens: &[&str]) -> Document {
        Document {
            id: "d".into(),
            label: "l".into(),
            split: Split::Train,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn undirected(set: &BTreeSet<TypedEdge>) -> BTreeSet<(usize, usize)> {
        set.iter().filter(|e| e.src < e.dst).map(|e| (e.src, e.dst)).collect()
    }

    #[test]
    fn window_three_over_three_tokens_links_all_pairs() {
        let ni = NodeIndex::from_tokens(&["a", "b", "c"]);
        let e = build_cooccurrence_edges(&ni, 3).unwrap();
        assert_eq!(undirected(&e), [(0, 1), (0, 2), (1, 2)].into());
        assert_eq!(e.len(), 6);
    }

    #[test]
    fn window_two_links_neighbours_only() {
        let ni = NodeIndex::from_tokens(&["a", "b", "c", "d"]);
        let e = build_cooccurrence_edges(&ni, 2).unwrap();
        assert_eq!(undirected(&e), [(0, 1), (1, 2), (2, 3)].into());
    }

    #[test]
    fn repeated_word_has_no_edges() {
        let ni = NodeIndex::from_tokens(&["a", "a", "a"]);
        assert!(build_cooccurrence_edges(&ni, 3).unwrap().is_empty());
        assert!(matches!(build_cooccurrence_edges(&ni, 1), Err(GraphError::Window(1))));
    }

    fn parse_of(forms: &[(&str, usize)]) -> ParsedDocument {
        ParsedDocument {
            doc_id: "d".into(),
            tokens: forms
                .iter()
                .map(|&(f, h)| ParseToken {
                    form: f.into(),
                    head: h,
                    deprel: "dep".into(),
                })
                .collect(),
        }
    }

    #[test]
    fn single_arc_survives_stopword_removal() {
        // "the cat sat" with "the" removed; arcs det(cat←the), nsubj(sat←cat), root.
        let d = doc(&["cat", "sat"]);
        let ni = d.node_index();
        let p = parse_of(&[("The", 2), ("cat", 3), ("sat", 0)]);
        let e = build_syntax_edges(&d, &ni, &p);
        assert_eq!(undirected(&e), [(0, 1)].into());
        assert!(e.iter().all(|x| x.relation == Relation::Syn));
    }

    #[test]
    fn arcs_touching_removed_words_give_nothing() {
        let d = doc(&["cat"]);
        let ni = d.node_index();
        let p = parse_of(&[("the", 2), ("cat", 0)]);
        assert!(build_syntax_edges(&d, &ni, &p).is_empty());
    }

    #[test]
    fn unalignable_parse_gives_no_edges() {
        let d = doc(&["cat", "sat"]);
        let ni = d.node_index();
        let p = parse_of(&[("dog", 2), ("sat", 0)]);
        assert!(align_parse(&d.tokens, &p).is_none());
        assert!(build_syntax_edges(&d, &ni, &p).is_empty());
    }

    #[test]
    fn semantic_edges_cases() {
        let v = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![-2.0, 1.0], vec![0.0, 0.0]];
        let (e, skipped) = semantic_edges_from_vectors(&v, 0.9).unwrap();
        assert_eq!(undirected(&e), [(0, 1)].into());
        assert_eq!(skipped, 3);
        assert!(semantic_edges_from_vectors(&v, 1.0).is_err());
    }

    #[test]
    fn assemble_keeps_parallel_relations() {
        let d = doc(&["a", "b"]);
        let ni = d.node_index();
        let co: BTreeSet<_> = [TypedEdge { src: 0, dst: 1, relation: Relation::Co }].into();
        let syn: BTreeSet<_> = [TypedEdge { src: 1, dst: 0, relation: Relation::Syn }].into();
        let g = assemble_graph(&d, &ni, &[&co, &syn, &BTreeSet::new()]).unwrap();
        assert_eq!(g.edges.len(), 4);
        assert_eq!(g.adjacency(), vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn single_word_document() {
        let d = doc(&["solo", "solo"]);
        let g = GraphBuilder::default()
            .build(&d, &EmbeddingTable::new(4, 0), None)
            .unwrap();
        assert_eq!(g.n_nodes(), 1);
        assert!(g.edges.is_empty());
        assert_eq!(g.token_nodes(), vec![0, 0]);
    }

    #[test]
    fn disjoint_sets_count_directed_edges() {
        let d = doc(&["a", "b", "c", "d"]);
        let ni = d.node_index();
        let mut co = BTreeSet::new();
        both_ways(&mut co, 0, 1, Relation::Co);
        both_ways(&mut co, 2, 3, Relation::Co);
        let mut syn = BTreeSet::new();
        both_ways(&mut syn, 1, 2, Relation::Syn);
        let mut sem = BTreeSet::new();
        both_ways(&mut sem, 0, 3, Relation::Sem);
        let g = assemble_graph(&d, &ni, &[&co, &syn, &sem]).unwrap();
        assert_eq!(g.edges.len(), 8);
    }

    #[test]
    fn record_round_trip_and_missing_field() {
        let d = doc(&["x", "y", "z", "x"]);
        let ni = d.node_index();
        let co = build_cooccurrence_edges(&ni, 3).unwrap();
        let g = assemble_graph(&d, &ni, &[&co]).unwrap();
        let line = serialize_graph(&g);
        assert_eq!(deserialize_graph(&line).unwrap(), g);

        let mut v: Value = serde_json::from_str(&line).unwrap();
        v.as_object_mut().unwrap().remove("edges");
        let err = deserialize_graph(&v.to_string()).unwrap_err();
        assert!(matches!(err, GraphError::Schema { field: "edges", .. }));
        assert!(err.to_string().contains("edges"));
    }

    #[test]
    fn asymmetric_record_is_rejected() {
        let rec = r#"{"doc_id":"d","label":"l","nodes":["a","b"],"positions":{"0":[0],"1":[1]},"edges":[[0,1,"co"]]}"#;
        assert!(matches!(
            deserialize_graph(rec),
            Err(GraphError::Schema { field: "edges", .. })
        ));
    }
}

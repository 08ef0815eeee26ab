#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use textgsl::train::toy::{toy_documents, toy_embeddings};

pub const DIM: usize = 16;

pub fn textgsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textgsl"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn ok(args: &[&str]) -> String {
    let o = textgsl(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy corpus and vectors on disk. `classes` relabels document `k` as `c{k % classes}`.
pub fn write_corpus(dir: &Path, n_train: usize, n_test: usize, classes: Option<usize>) -> (PathBuf, PathBuf) {
    let docs = toy_documents(n_train, n_test, 0);
    let mut corpus = String::new();
    for (k, d) in docs.iter().enumerate() {
        let label = classes.map_or(d.label.clone(), |c| format!("c{}", k % c));
        let split = if d.split == textgsl::corpus::Split::Test { "test" } else { "train" };
        writeln!(corpus, "{split}\t{label}\t{}", d.tokens.join(" ")).unwrap();
    }
    let table = toy_embeddings(DIM, 0);
    let words: BTreeSet<&String> = docs.iter().flat_map(|d| &d.tokens).collect();
    let mut vectors = String::new();
    for w in words {
        let v: Vec<String> = table.lookup(w).iter().map(|x| x.to_string()).collect();
        writeln!(vectors, "{w} {}", v.join(" ")).unwrap();
    }
    let (c, v) = (dir.join("corpus.tsv"), dir.join("vectors.txt"));
    std::fs::write(&c, corpus).unwrap();
    std::fs::write(&v, vectors).unwrap();
    (c, v)
}

pub struct Prepared {
    pub docs: PathBuf,
    pub graphs: PathBuf,
    pub vectors: PathBuf,
}

/// Runs ingest and build-graphs on a toy corpus under `dir`.
pub fn prepare(dir: &Path, n_train: usize, n_test: usize, classes: Option<usize>) -> Prepared {
    let (corpus, vectors) = write_corpus(dir, n_train, n_test, classes);
    let ingest = dir.join("ingest");
    let graphs = dir.join("graphs");
    ok(&["ingest", "--corpus", s(&corpus), "--out", s(&ingest)]);
    let docs = ingest.join("docs.jsonl");
    let dim = DIM.to_string();
    ok(&[
        "build-graphs", "--docs", s(&docs), "--embeddings", s(&vectors), "--embedding-dim", &dim, "--out", s(&graphs),
    ]);
    Prepared {
        docs,
        graphs: graphs.join("graphs.jsonl"),
        vectors,
    }
}

/// Small model and short schedule with data paths relative to `dir`.
pub fn write_config(dir: &Path, name: &str, epochs: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "data": {
            "docs": "ingest/docs.jsonl",
            "graphs": "graphs/graphs.jsonl",
            "embeddings": "vectors.txt",
            "embedding_dim": DIM,
        },
        "model": {"hidden": 8, "ff_dim": 16},
        "train": {"epochs": epochs, "batch_size": 4, "learning_rate": 0.01, "patience": null, "seed": 3},
    });
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

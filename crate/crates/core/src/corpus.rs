//! Corpus ingestion: tokenization, stopword and frequency filtering,
//! vocabulary and label bookkeeping, and seeded validation splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: expected `split<TAB>label<TAB>text`")]
    Malformed { line: usize },
    #[error("line {line}: unknown split `{tag}` (expected train or test)")]
    UnknownSplit { line: usize, tag: String },
    #[error("line {line}: document is empty after tokenization")]
    EmptyDocument { line: usize },
    #[error("corpus has {texts} texts but label file has {labels} lines")]
    LabelCount { texts: usize, labels: usize },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("validation ratio {0} must lie strictly between 0 and 1")]
    Ratio(f64),
    #[error("min_freq must be at least 1")]
    MinFreq,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub label: String,
    pub split: Split,
    pub tokens: Vec<String>,
}

/// Unique words of a document in first-occurrence order, plus the node
/// index of every token position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIndex {
    pub nodes: Vec<String>,
    pub token_nodes: Vec<usize>,
}

impl NodeIndex {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut token_nodes = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            let k = *seen.entry(t).or_insert_with(|| {
                nodes.push(t.to_string());
                nodes.len() - 1
            });
            token_nodes.push(k);
        }
        Self { nodes, token_nodes }
    }

    /// Token positions of every node, ascending.
    pub fn positions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (pos, &n) in self.token_nodes.iter().enumerate() {
            out[n].push(pos);
        }
        out
    }
}

impl Document {
    pub fn node_index(&self) -> NodeIndex {
        NodeIndex::from_tokens(&self.tokens)
    }
}

/// Lowercases a raw whitespace-delimited token and strips every character
/// that is not alphanumeric, keeping apostrophes and hyphens only between
/// two alphanumeric characters.
pub fn normalize_token(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c == '\'' || c == '-' {
            let prev = out.chars().last().is_some_and(|p| p.is_alphanumeric());
            let next = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if prev && next {
                out.push(c);
            }
        }
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Reads a corpus of `split<TAB>label<TAB>text` lines.
///
/// With `label_path`, the corpus holds one raw text per line and labels come
/// from the label file, one line per text, as `split<TAB>label` or
/// `name<TAB>split<TAB>label`; in the latter form `name` becomes the
/// document id. Otherwise ids are `d<line number>`.
pub fn load_corpus(corpus_path: &Path, label_path: Option<&Path>) -> Result<Vec<Document>, IngestError> {
    let text = fs::read_to_string(corpus_path).map_err(io_err(corpus_path))?;
    match label_path {
        None => parse_corpus(&text),
        Some(lp) => {
            let labels = fs::read_to_string(lp).map_err(io_err(lp))?;
            parse_split_corpus(&text, &labels)
        }
    }
}

fn parse_split_tag(tag: &str, line: usize) -> Result<Split, IngestError> {
    match tag.trim() {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(IngestError::UnknownSplit {
            line,
            tag: other.to_string(),
        }),
    }
}

fn make_doc(id: String, split: Split, label: &str, text: &str, line: usize) -> Result<Document, IngestError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(IngestError::EmptyDocument { line });
    }
    Ok(Document {
        id,
        label: label.trim().to_string(),
        split,
        tokens,
    })
}

pub fn parse_corpus(text: &str) -> Result<Vec<Document>, IngestError> {
    let mut docs = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.splitn(3, '\t');
        let (Some(split), Some(label), Some(body)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(IngestError::Malformed { line });
        };
        let split = parse_split_tag(split, line)?;
        docs.push(make_doc(format!("d{line}"), split, label, body, line)?);
    }
    Ok(docs)
}

pub fn parse_split_corpus(texts: &str, labels: &str) -> Result<Vec<Document>, IngestError> {
    let texts: Vec<&str> = texts.lines().collect();
    let labels: Vec<&str> = labels.lines().filter(|l| !l.trim().is_empty()).collect();
    if texts.len() != labels.len() {
        return Err(IngestError::LabelCount {
            texts: texts.len(),
            labels: labels.len(),
        });
    }
    let mut docs = Vec::with_capacity(texts.len());
    for (k, (body, meta)) in texts.iter().zip(&labels).enumerate() {
        let line = k + 1;
        let fields: Vec<&str> = meta.split('\t').collect();
        let (id, split, label) = match fields.as_slice() {
            [split, label] => (format!("d{line}"), *split, *label),
            [name, split, label] => (name.trim().to_string(), *split, *label),
            _ => return Err(IngestError::Malformed { line }),
        };
        let split = parse_split_tag(split, line)?;
        docs.push(make_doc(id, split, label, body, line)?);
    }
    Ok(docs)
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Word index with corpus frequencies; index order is first occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
    counts: Vec<usize>,
}

impl Vocabulary {
    pub fn build(docs: &[Document]) -> Self {
        let mut v = Vocabulary::default();
        for d in docs {
            for t in &d.tokens {
                match v.index.get(t) {
                    Some(&k) => v.counts[k] += 1,
                    None => {
                        v.index.insert(t.clone(), v.words.len());
                        v.words.push(t.clone());
                        v.counts.push(1);
                    }
                }
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> usize {
        self.counts[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `word<TAB>count` lines in index order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (w, c) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{w}\t{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    /// Sorted distinct labels of `docs`.
    pub fn from_docs(docs: &[Document]) -> Self {
        let set: BTreeSet<&str> = docs.iter().map(|d| d.label.as_str()).collect();
        Self {
            labels: set.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn from_labels(labels: Vec<String>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        Self {
            labels: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

fn is_english(token: &str) -> bool {
    token
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '\'' || c == '-')
}

/// Removes stopwords, tokens with non-English characters and words whose
/// corpus-wide frequency is below `min_freq`, then drops documents left
/// empty. The vocabulary covers every surviving word of every split.
pub fn preprocess(
    docs: Vec<Document>,
    stopwords: Option<&HashSet<String>>,
    min_freq: usize,
) -> Result<(Vec<Document>, Vocabulary), IngestError> {
    if min_freq == 0 {
        return Err(IngestError::MinFreq);
    }
    let mut docs: Vec<Document> = docs
        .into_iter()
        .map(|mut d| {
            d.tokens
                .retain(|t| is_english(t) && !stopwords.is_some_and(|s| s.contains(t)));
            d
        })
        .collect();
    let mut freq: HashMap<String, usize> = HashMap::new();
    for d in &docs {
        for t in &d.tokens {
            *freq.entry(t.clone()).or_default() += 1;
        }
    }
    for d in &mut docs {
        d.tokens.retain(|t| freq[t] >= min_freq);
    }
    docs.retain(|d| {
        if d.tokens.is_empty() {
            log::warn!("document {} is empty after preprocessing; dropped", d.id);
            false
        } else {
            true
        }
    });
    let vocab = Vocabulary::build(&docs);
    Ok((docs, vocab))
}

/// Re-tags `round(ratio × |train|)` training documents (half rounds up) as
/// validation, chosen by a seeded shuffle.
pub fn make_validation_split(mut docs: Vec<Document>, ratio: f64, seed: u64) -> Result<Vec<Document>, IngestError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IngestError::Ratio(ratio));
    }
    let mut train: Vec<usize> = docs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let k = validation_count(train.len(), ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train.shuffle(&mut rng);
    for &i in &train[..k] {
        docs[i].split = Split::Val;
    }
    Ok(docs)
}

pub fn validation_count(train: usize, ratio: f64) -> usize {
    // The epsilon absorbs representation error in products like 0.1 × 5485.
    ((ratio * train as f64 + 0.5 + 1e-9).floor() as usize).min(train)
}

pub fn write_manifest<W: Write>(mut out: W, docs: &[Document]) -> io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<Document>, IngestError> {
    let mut docs = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| IngestError::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Document = serde_json::from_str(&line).map_err(|e| IngestError::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        if d.tokens.is_empty() {
            return Err(IngestError::Manifest {
                line: line_no,
                reason: "empty token list".into(),
            });
        }
        docs.push(d);
    }
    Ok(docs)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Document>, IngestError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_manifest(BufReader::new(f))
}

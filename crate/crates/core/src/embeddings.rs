//! Frozen pretrained word vectors with deterministic out-of-vocabulary
//! initialization.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use textgsl_autodiff::{Scalar, Tensor};
use thiserror::Error;

use crate::corpus::NodeIndex;

pub const DEFAULT_DIM: usize = 300;
pub const OOV_RANGE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no vectors of dimension {dim} found")]
    Empty { dim: usize },
}

/// Word vectors of a fixed dimension. Unknown words get a vector drawn
/// uniformly from `[-range, range]` by a generator seeded from a hash of
/// `(seed, word)`, so they are stable across processes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    oov_seed: u64,
    oov_range: f64,
    rejected: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_seed: u64) -> Self {
        Self {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
            oov_seed,
            oov_range: OOV_RANGE,
            rejected: 0,
        }
    }

    /// Inserts or replaces a vector; panics if its length is not the table dimension.
    pub fn insert(&mut self, word: &str, vector: &[f64]) {
        assert_eq!(vector.len(), self.dim, "embedding dimension");
        match self.index.get(word) {
            Some(&k) => self.vectors[k * self.dim..(k + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(word.to_string(), self.index.len());
                self.vectors.extend_from_slice(vector);
            }
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

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Entries skipped at load because of a wrong dimension or unparsable value.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn set_oov_seed(&mut self, seed: u64) {
        self.oov_seed = seed;
    }

    pub fn stored(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&k| &self.vectors[k * self.dim..(k + 1) * self.dim])
    }

    pub fn lookup(&self, word: &str) -> Vec<f64> {
        match self.stored(word) {
            Some(v) => v.to_vec(),
            None => self.oov_vector(word),
        }
    }

    fn oov_vector(&self, word: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.oov_seed.to_le_bytes());
        h.update(word.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let r = self.oov_range;
        (0..self.dim).map(|_| rng.gen_range(-r..=r)).collect()
    }

    /// Node feature matrix (one row per unique word, first-occurrence order)
    /// together with the node index that maps token positions to rows.
    pub fn features_for<T: Scalar, S: AsRef<str>>(&self, tokens: &[S]) -> (Tensor<T>, NodeIndex) {
        let ni = NodeIndex::from_tokens(tokens);
        let mut data = Vec::with_capacity(ni.nodes.len() * self.dim);
        for w in &ni.nodes {
            data.extend(self.lookup(w).into_iter().map(T::lit));
        }
        let t = Tensor::matrix(ni.nodes.len(), self.dim, data).expect("feature shape");
        (t, ni)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// Parses `word v1 ... vD` lines. Lines with the wrong number of values are
/// counted and skipped, as is a leading `count dim` header line. When
/// `keep` is given, only those words are retained.
pub fn read_pretrained<R: BufRead>(
    input: R,
    expected_dim: usize,
    keep: Option<&HashSet<String>>,
    path: &Path,
) -> Result<EmbeddingTable, EmbeddingError> {
    let mut table = EmbeddingTable::new(expected_dim, 0);
    let mut values = Vec::with_capacity(expected_dim);
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if keep.is_some_and(|s| !s.contains(word)) {
            continue;
        }
        values.clear();
        let mut ok = true;
        for p in parts {
            match p.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if k == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        if !ok || values.len() != expected_dim {
            table.rejected += 1;
            continue;
        }
        table.insert(word, &values);
    }
    if table.rejected > 0 {
        log::warn!(
            "{}: skipped {} entries without {expected_dim} numeric values",
            path.display(),
            table.rejected
        );
    }
    if table.is_empty() && keep.is_none_or(|s| !s.is_empty()) {
        return Err(EmbeddingError::Empty { dim: expected_dim });
    }
    Ok(table)
}

pub fn load_pretrained(
    path: &Path,
    expected_dim: usize,
    keep: Option<&HashSet<String>>,
) -> Result<EmbeddingTable, EmbeddingError> {
    let f = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_pretrained(BufReader::new(f), expected_dim, keep, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, dim: usize) -> Result<EmbeddingTable, EmbeddingError> {
        read_pretrained(text.as_bytes(), dim, None, Path::new("mem"))
    }

    #[test]
    fn single_line_file() {
        let t = parse("hello 0.1 0.2\n", 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup("hello"), vec![0.1, 0.2]);
    }

    #[test]
    fn wrong_dimension_rows_are_counted() {
        let t = parse("4 2\na 1 2\nb 1 2 3\nc x y\n", 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rejected(), 2);
        assert!(matches!(parse("a 1 2 3\n", 2), Err(EmbeddingError::Empty { dim: 2 })));
    }

    #[test]
    fn keep_filter_restricts_entries() {
        let keep: HashSet<String> = ["b".to_string()].into();
        let t = read_pretrained("a 1 2\nb 3 4\n".as_bytes(), 2, Some(&keep), Path::new("m")).unwrap();
        assert!(!t.contains("a"));
        assert_eq!(t.stored("b"), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn self_similarity_is_one() {
        let t = parse("king 0.3 -1.2 4.0\n", 3).unwrap();
        let v = t.lookup("king");
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn oov_vectors_are_deterministic_and_bounded() {
        let t = EmbeddingTable::new(300, 17);
        assert_eq!(t.lookup("zyzzyva"), t.lookup("zyzzyva"));
        assert_ne!(t.lookup("zyzzyva"), t.lookup("zyzzyvas"));
        let mut other = t.clone();
        other.set_oov_seed(18);
        assert_ne!(t.lookup("zyzzyva"), other.lookup("zyzzyva"));
        for i in 0..1000 {
            let v = t.lookup(&format!("oov{i}"));
            assert_eq!(v.len(), 300);
            assert!(v.iter().all(|x| (-OOV_RANGE..=OOV_RANGE).contains(x)));
        }
    }

    #[test]
    fn features_follow_first_occurrence() {
        let mut t = EmbeddingTable::new(2, 0);
        t.insert("cat", &[1.0, 2.0]);
        let (x, ni) = t.features_for::<f64, _>(&["cat", "sat", "cat"]);
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x.row(0), &[1.0, 2.0]);
        assert_eq!(ni.positions(), vec![vec![0, 2], vec![1]]);
        assert!(x.row(1).iter().all(|v| v.abs() <= OOV_RANGE));
    }
}

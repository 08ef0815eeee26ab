//! Minimal CoNLL-U reader for externally produced dependency parses.
//!
//! Only the ID, FORM and HEAD columns are used. A `# doc_id = <id>` comment
//! opens a document; sentences that follow without a new `doc_id` comment
//! are appended to the same document with their token ids offset, so heads
//! always refer to positions within the whole document. Multiword token
//! ranges (`1-2`) and empty nodes (`1.1`) are skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("duplicate doc_id `{0}`")]
    DuplicateDoc(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseToken {
    pub form: String,
    /// 1-based document-level index of the head token; 0 for the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedDocument {
    pub doc_id: String,
    pub tokens: Vec<ParseToken>,
}

pub fn parse_conllu(text: &str) -> Result<BTreeMap<String, ParsedDocument>, ConlluError> {
    let mut docs: BTreeMap<String, ParsedDocument> = BTreeMap::new();
    let mut current: Option<ParsedDocument> = None;
    let mut sentence_offset = 0usize;
    let mut in_sentence = false;

    let finish = |doc: Option<ParsedDocument>, docs: &mut BTreeMap<String, ParsedDocument>| {
        if let Some(d) = doc {
            if docs.contains_key(&d.doc_id) {
                return Err(ConlluError::DuplicateDoc(d.doc_id));
            }
            docs.insert(d.doc_id.clone(), d);
        }
        Ok(())
    };

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            if in_sentence {
                if let Some(d) = current.as_ref() {
                    sentence_offset = d.tokens.len();
                }
            }
            in_sentence = false;
            continue;
        }
        if let Some(comment) = l.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "doc_id" {
                    finish(current.take(), &mut docs)?;
                    current = Some(ParsedDocument {
                        doc_id: value.trim().to_string(),
                        tokens: Vec::new(),
                    });
                    sentence_offset = 0;
                }
            }
            continue;
        }
        let doc = current.as_mut().ok_or_else(|| ConlluError::Syntax {
            line,
            reason: "token line before any `# doc_id` comment".into(),
        })?;
        in_sentence = true;
        let cols: Vec<&str> = l.split('\t').collect();
        if cols.len() < 8 {
            return Err(ConlluError::Syntax {
                line,
                reason: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| ConlluError::Syntax {
            line,
            reason: format!("bad token id `{}`", cols[0]),
        })?;
        if id != doc.tokens.len() - sentence_offset + 1 {
            return Err(ConlluError::Syntax {
                line,
                reason: format!("token id {id} out of sequence"),
            });
        }
        let head = match cols[6] {
            "_" => 0,
            h => {
                let h: usize = h.parse().map_err(|_| ConlluError::Syntax {
                    line,
                    reason: format!("bad head `{h}`"),
                })?;
                if h == 0 {
                    0
                } else {
                    h + sentence_offset
                }
            }
        };
        doc.tokens.push(ParseToken {
            form: cols[1].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    finish(current, &mut docs)?;
    Ok(docs)
}

pub fn load_conllu(path: &Path) -> Result<BTreeMap<String, ParsedDocument>, ConlluError> {
    let text = fs::read_to_string(path).map_err(|source| ConlluError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_conllu(&text)
}

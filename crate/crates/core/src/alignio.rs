//! Source-target word alignments in Pharaoh format and word vectors in the
//! word2vec text format.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignIoError {
    #[error("malformed alignment token {0:?}")]
    MalformedToken(String),
    #[error("line {line}: header mismatch: {msg}")]
    HeaderMismatch { line: usize, msg: String },
    #[error("line {line}: duplicate embedding for {word:?}")]
    DuplicateEmbedding { line: usize, word: String },
    #[error("line {line}: dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: bad number {token:?}")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: non-finite embedding value")]
    NonFinite { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A set of `(src_index, tgt_index)` pairs. One source word may align to
/// several target tokens and vice versa.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct WordAlignment {
    pairs: BTreeSet<(usize, usize)>,
}

impl WordAlignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, src: usize, tgt: usize) -> bool {
        self.pairs.insert((src, tgt))
    }

    pub fn contains(&self, src: usize, tgt: usize) -> bool {
        self.pairs.contains(&(src, tgt))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs in ascending `(src, tgt)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    /// Target indices aligned to source position `src`, ascending.
    pub fn targets_of(&self, src: usize) -> BTreeSet<usize> {
        self.pairs
            .range((src, 0)..=(src, usize::MAX))
            .map(|&(_, t)| t)
            .collect()
    }

    /// Adds `(ds, dt)` to every pair.
    pub fn shifted(&self, ds: usize, dt: usize) -> Self {
        self.iter().map(|(s, t)| (s + ds, t + dt)).collect()
    }
}

impl FromIterator<(usize, usize)> for WordAlignment {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

/// Canonical Pharaoh rendering: pairs ascending, single-space separated.
impl fmt::Display for WordAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, (s, t)) in self.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}-{t}")?;
        }
        Ok(())
    }
}

/// Parses fast_align output (`"0-0 1-2 2-1"`). Any whitespace separates
/// tokens; repeated pairs collapse.
pub fn parse_pharaoh(text: &str) -> Result<WordAlignment, AlignIoError> {
    let mut out = WordAlignment::new();
    for tok in text.split_whitespace() {
        let malformed = || AlignIoError::MalformedToken(tok.to_string());
        let (s, t) = tok.split_once('-').ok_or_else(malformed)?;
        let s = parse_index(s).ok_or_else(malformed)?;
        let t = parse_index(t).ok_or_else(malformed)?;
        out.insert(s, t);
    }
    Ok(out)
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Word vectors keyed by word, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            words: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Returns false (and leaves the table unchanged) if `word` is already
    /// present. Panics on a dimension mismatch.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> bool {
        assert_eq!(vector.len(), self.dim, "dimension mismatch");
        let word = word.into();
        if self.index.contains_key(&word) {
            return false;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.vectors.push(vector);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words
            .iter()
            .zip(&self.vectors)
            .map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// word2vec text rendering (`"V D"` header, one word per line).
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (w, v) in self.iter() {
            out.push_str(w);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, AlignIoError> {
    parse_embeddings_str(&fs::read_to_string(path)?)
}

pub fn parse_embeddings_str(text: &str) -> Result<EmbeddingTable, AlignIoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(AlignIoError::HeaderMismatch {
        line: 1,
        msg: "missing \"V D\" header".into(),
    })?;
    let bad_header = || AlignIoError::HeaderMismatch {
        line: 1,
        msg: format!("expected \"V D\", found {header:?}"),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [v, d] = fields[..] else {
        return Err(bad_header());
    };
    let vocab: usize = v.parse().map_err(|_| bad_header())?;
    let dim: usize = d.parse().map_err(|_| bad_header())?;
    if dim == 0 {
        return Err(bad_header());
    }

    let mut table = EmbeddingTable::new(dim);
    let mut last_line = 1;
    for (line, text) in lines {
        last_line = line;
        let mut toks = text.split_whitespace();
        let word = toks.next().expect("non-blank line");
        let vector = toks
            .map(|t| {
                t.parse::<f64>().map_err(|_| AlignIoError::BadNumber {
                    line,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vector.len() != dim {
            return Err(AlignIoError::DimensionMismatch {
                line,
                expected: dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(AlignIoError::NonFinite { line });
        }
        if !table.insert(word, vector) {
            return Err(AlignIoError::DuplicateEmbedding {
                line,
                word: word.to_string(),
            });
        }
    }
    if table.len() != vocab {
        return Err(AlignIoError::HeaderMismatch {
            line: last_line,
            msg: format!("header declares {vocab} words, found {}", table.len()),
        });
    }
    Ok(table)
}

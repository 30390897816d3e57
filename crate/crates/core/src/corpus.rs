//! Speech-translation triples, the frame text format and the JSON-lines
//! manifest.
//!
//! A manifest line looks like
//!
//! ```text
//! {"id":"u1","speaker":"spk1","frames_path":"u1.frames","src_tokens":["the","cat"],"src_pos":["DET","NOUN"],"tgt_tokens":["le","chat"],"time_align":[[0,2],[2,5]],"word_align":"0-0 1-1"}
//! ```
//!
//! `frames_path` is resolved against the manifest's directory. Tests and
//! small fixtures may carry `"frames":[[..],..]` inline instead.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignio::{parse_pharaoh, WordAlignment};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad header {0:?}: expected \"T D\" with D >= 1")]
    BadHeader(String),
    #[error("row count mismatch: header declares {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("row {row}: column count mismatch: expected {expected}, found {found}")]
    ColumnMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: non-numeric cell {token:?}")]
    BadNumber { row: usize, token: String },
    #[error("row {row}: non-finite frame value")]
    NonFinite { row: usize },
    #[error("frame dimension must be at least 1")]
    ZeroDim,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: record {id:?}: frames: {source}")]
    Frames {
        line: usize,
        id: String,
        source: FrameError,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} is invalid: {}", join_violations(.violations))]
    Invalid {
        line: usize,
        id: String,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// `T x D` matrix of finite feature values, `D >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeq(Array2<f64>);

impl FrameSeq {
    pub fn new(data: Array2<f64>) -> Result<Self, FrameError> {
        if data.ncols() == 0 {
            return Err(FrameError::ZeroDim);
        }
        if let Some((row, _)) = data
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, r)| r.iter().any(|x| !x.is_finite()))
        {
            return Err(FrameError::NonFinite { row });
        }
        Ok(Self(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FrameError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(FrameError::ColumnMismatch {
                    row,
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::new(Array2::from_shape_vec((rows.len(), dim), flat).expect("rectangular"))
    }

    /// Zero frames of width `dim`.
    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0);
        Self(Array2::zeros((0, dim)))
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.0.row(t)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.0.outer_iter().map(|r| r.to_vec()).collect()
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, span: Span) -> FrameSeq {
        FrameSeq(
            self.0
                .slice(ndarray::s![span.start..span.end, ..])
                .to_owned(),
        )
    }

    /// Stacks sequences of equal dim in order.
    pub fn concat(parts: &[&FrameSeq]) -> FrameSeq {
        let dim = parts.first().expect("at least one part").dim();
        let views: Vec<_> = parts
            .iter()
            .map(|p| {
                assert_eq!(p.dim(), dim, "dimension mismatch");
                p.view()
            })
            .collect();
        FrameSeq(ndarray::concatenate(Axis(0), &views).expect("equal dims"))
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Frame text format: `"T D"` header, then `T` rows of `D` values.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for r in self.0.outer_iter() {
            let cells: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameSeq, FrameError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_frames(&text)
}

pub fn write_frames(path: impl AsRef<Path>, frames: &FrameSeq) -> Result<(), FrameError> {
    let path = path.as_ref();
    fs::write(path, frames.to_text()).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_frames(text: &str) -> Result<FrameSeq, FrameError> {
    let (rows, dim) = parse_numeric_block(text)?;
    FrameSeq::new(Array2::from_shape_vec((rows.len() / dim.max(1), dim), rows).expect("shape"))
}

/// Parses a `"T D"` block into row-major values without the finiteness
/// check. Shared with the loss fixtures.
pub fn parse_numeric_block(text: &str) -> Result<(Vec<f64>, usize), FrameError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().unwrap_or("");
    let bad_header = || FrameError::BadHeader(header.to_string());
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [t, d] = fields[..] else {
        return Err(bad_header());
    };
    let rows: usize = t.parse().map_err(|_| bad_header())?;
    let dim: usize = d.parse().map_err(|_| bad_header())?;
    if dim == 0 {
        return Err(bad_header());
    }
    let mut data = Vec::with_capacity(rows * dim);
    let mut found = 0;
    for (row, line) in lines.enumerate() {
        found += 1;
        if row >= rows {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| FrameError::BadNumber {
                row,
                token: tok.to_string(),
            })?;
            if !x.is_finite() {
                return Err(FrameError::NonFinite { row });
            }
            data.push(x);
        }
        if data.len() - before != dim {
            return Err(FrameError::ColumnMismatch {
                row,
                expected: dim,
                found: data.len() - before,
            });
        }
    }
    if found != rows {
        return Err(FrameError::RowCountMismatch {
            expected: rows,
            found,
        });
    }
    Ok((data, dim))
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn shifted(&self, by: usize) -> Self {
        Self::new(self.start + by, self.end + by)
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// One speech / transcription / translation item.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub id: String,
    pub speaker: String,
    pub frames: FrameSeq,
    /// Where the frames live on disk, relative to the manifest. `None` means
    /// the frames are written inline.
    pub frames_path: Option<String>,
    pub src_tokens: Vec<String>,
    pub src_pos: Vec<String>,
    pub tgt_tokens: Vec<String>,
    /// One interval per source token.
    pub time_align: Vec<Span>,
    pub word_align: WordAlignment,
}

/// A broken invariant: the field, a short rule name, and details.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.field, self.rule, self.detail)
    }
}

/// Lists every broken triple invariant; empty iff the triple is consistent.
pub fn validate_triple(t: &Triple) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, rule, detail: String| {
        out.push(Violation {
            field,
            rule,
            detail,
        })
    };
    let n = t.src_tokens.len();
    let m = t.tgt_tokens.len();
    let frames = t.frames.len();

    if t.id.is_empty() {
        push("id", "empty id", String::new());
    }
    if frames == 0 {
        push("frames", "empty frames", "T must be at least 1".into());
    }
    if n == 0 {
        push(
            "src_tokens",
            "empty src_tokens",
            "N must be at least 1".into(),
        );
    }
    if m == 0 {
        push(
            "tgt_tokens",
            "empty tgt_tokens",
            "M must be at least 1".into(),
        );
    }
    if t.src_pos.len() != n {
        push(
            "src_pos",
            "src_pos length mismatch",
            format!("{} tags for {n} tokens", t.src_pos.len()),
        );
    }
    if t.time_align.len() != n {
        push(
            "time_align",
            "time_align length mismatch",
            format!("{} intervals for {n} tokens", t.time_align.len()),
        );
    }
    for (k, span) in t.time_align.iter().enumerate() {
        if span.is_empty() {
            push(
                "time_align",
                "time_align empty interval",
                format!("interval {k} is [{}, {})", span.start, span.end),
            );
        }
        if span.end > frames {
            push(
                "time_align",
                "time_align out of bounds",
                format!(
                    "interval {k} [{}, {}) exceeds frame count {frames}",
                    span.start, span.end
                ),
            );
        }
        if k > 0 {
            let prev = t.time_align[k - 1];
            if span.start < prev.start {
                push(
                    "time_align",
                    "time_align not monotone",
                    format!("interval {k} starts before interval {}", k - 1),
                );
            } else if span.start < prev.end {
                push(
                    "time_align",
                    "time_align overlap",
                    format!("intervals {} and {k}", k - 1),
                );
            }
        }
    }
    for (s, g) in t.word_align.iter() {
        if s >= n {
            push(
                "word_align",
                "src index out of range",
                format!("pair {s}-{g} with N={n}"),
            );
        }
        if g >= m {
            push(
                "word_align",
                "tgt index out of range",
                format!("pair {s}-{g} with M={m}"),
            );
        }
    }
    out
}

/// Ordered triples with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    items: Vec<Triple>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Fails with the first repeated id.
    pub fn new(items: Vec<Triple>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(items.len());
        for (k, t) in items.iter().enumerate() {
            if index.insert(t.id.clone(), k).is_some() {
                return Err(t.id.clone());
            }
        }
        Ok(Self { items, index })
    }

    pub fn items(&self) -> &[Triple] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Triple> {
        self.index.get(id).map(|&k| &self.items[k])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.items.iter()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Triple;
    type IntoIter = std::slice::Iter<'a, Triple>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f64>>>,
    src_tokens: Vec<String>,
    src_pos: Vec<String>,
    tgt_tokens: Vec<String>,
    time_align: Vec<Span>,
    word_align: String,
}

/// One parsed manifest line, valid or not.
#[derive(Debug)]
pub struct RecordOutcome {
    pub line: usize,
    pub result: Result<Triple, CorpusError>,
}

/// Parses every record without checking triple invariants or id
/// uniqueness; `load_manifest` and the validator build on this.
pub fn read_manifest_records(path: impl AsRef<Path>) -> Result<Vec<RecordOutcome>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_manifest_records(&text, base))
}

/// Like [`read_manifest_records`] on in-memory text; `frames_path` values
/// resolve against `base`.
pub fn parse_manifest_records(text: &str, base: &Path) -> Vec<RecordOutcome> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| RecordOutcome {
            line: n + 1,
            result: parse_record(l, n + 1, base),
        })
        .collect()
}

fn parse_record(text: &str, line: usize, base: &Path) -> Result<Triple, CorpusError> {
    let rec: Record = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line,
        msg: e.to_string(),
    })?;
    let frames_err = |source| CorpusError::Frames {
        line,
        id: rec.id.clone(),
        source,
    };
    let frames = match (&rec.frames_path, &rec.frames) {
        (Some(p), None) => read_frames(base.join(p)).map_err(frames_err)?,
        (None, Some(rows)) => FrameSeq::from_rows(rows).map_err(frames_err)?,
        _ => {
            return Err(CorpusError::Malformed {
                line,
                msg: format!(
                    "record {:?} needs exactly one of frames_path and frames",
                    rec.id
                ),
            })
        }
    };
    let word_align = parse_pharaoh(&rec.word_align).map_err(|e| CorpusError::Malformed {
        line,
        msg: format!("record {:?}: word_align: {e}", rec.id),
    })?;
    Ok(Triple {
        id: rec.id,
        speaker: rec.speaker,
        frames,
        frames_path: rec.frames_path,
        src_tokens: rec.src_tokens,
        src_pos: rec.src_pos,
        tgt_tokens: rec.tgt_tokens,
        time_align: rec.time_align,
        word_align,
    })
}

/// Loads and validates a manifest. Fails on the first malformed or invalid
/// record, or on a repeated id.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    collect_corpus(read_manifest_records(path)?)
}

pub fn load_manifest_str(text: &str, base: &Path) -> Result<Corpus, CorpusError> {
    collect_corpus(parse_manifest_records(text, base))
}

fn collect_corpus(records: Vec<RecordOutcome>) -> Result<Corpus, CorpusError> {
    let mut items = Vec::with_capacity(records.len());
    let mut seen = HashMap::new();
    for RecordOutcome { line, result } in records {
        let t = result?;
        let violations = validate_triple(&t);
        if !violations.is_empty() {
            return Err(CorpusError::Invalid {
                line,
                id: t.id,
                violations,
            });
        }
        if seen.insert(t.id.clone(), line).is_some() {
            return Err(CorpusError::DuplicateId { line, id: t.id });
        }
        items.push(t);
    }
    Ok(Corpus::new(items).expect("ids checked"))
}

/// Canonical manifest line for one triple (no trailing newline).
pub fn record_line(t: &Triple) -> String {
    let rec = Record {
        id: t.id.clone(),
        speaker: t.speaker.clone(),
        frames_path: t.frames_path.clone(),
        frames: t.frames_path.is_none().then(|| t.frames.rows()),
        src_tokens: t.src_tokens.clone(),
        src_pos: t.src_pos.clone(),
        tgt_tokens: t.tgt_tokens.clone(),
        time_align: t.time_align.clone(),
        word_align: t.word_align.to_string(),
    };
    serde_json::to_string(&rec).expect("serializable record")
}

pub fn manifest_string<'a>(items: impl IntoIterator<Item = &'a Triple>) -> String {
    let mut out = String::new();
    for t in items {
        out.push_str(&record_line(t));
        out.push('\n');
    }
    out
}

/// Writes the manifest only; frame files named by `frames_path` are the
/// caller's responsibility.
pub fn write_manifest(path: impl AsRef<Path>, corpus: &Corpus) -> std::io::Result<()> {
    fs::write(path, manifest_string(corpus))
}

#[cfg(test)]
pub(crate) use tests::cat_triple;

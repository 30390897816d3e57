//! Exhaustive cosine top-k search over an [`EmbeddingTable`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::alignio::EmbeddingTable;
use crate::numfmt::fmt_sig;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum NeighborError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("query word {0:?} missing from embeddings")]
    MissingWord(String),
    #[error("query word {0:?} has a zero-norm vector")]
    ZeroNormQuery(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("line {line}: malformed neighbor entry {token:?}")]
    Malformed { line: usize, token: String },
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, NeighborError> {
    if u.len() != v.len() {
        return Err(NeighborError::DimMismatch(u.len(), v.len()));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(NeighborError::ZeroNorm);
    }
    Ok(dot(u, v) / (nu * nv))
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Descending score, then ascending word.
fn rank(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Up to `k` neighbors per query word, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub k: usize,
    pub entries: BTreeMap<String, Vec<(String, f64)>>,
}

impl NeighborTable {
    pub fn get(&self, word: &str) -> Option<&[(String, f64)]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// Cache format: `word  n1:s1  n2:s2 ...`, scores at 9 significant
    /// digits, one line per query word in word order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, list) in &self.entries {
            out.push_str(w);
            for (n, s) in list {
                out.push_str("  ");
                out.push_str(n);
                out.push(':');
                out.push_str(&fmt_sig(*s, 9));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the cache format. Lines starting with `#` are ignored; `k` is
    /// taken as the longest list (at least 1).
    pub fn from_text(text: &str) -> Result<Self, NeighborError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            let word = toks.next().expect("non-blank").to_string();
            let list = toks
                .map(|tok| {
                    let malformed = || NeighborError::Malformed {
                        line: line_no,
                        token: tok.to_string(),
                    };
                    let (w, s) = tok.rsplit_once(':').ok_or_else(malformed)?;
                    let s: f64 = s.parse().map_err(|_| malformed())?;
                    if w.is_empty() || !s.is_finite() {
                        return Err(malformed());
                    }
                    Ok((w.to_string(), s))
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.insert(word, list);
        }
        let k = entries.values().map(Vec::len).max().unwrap_or(0).max(1);
        Ok(Self { k, entries })
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Result<Self, NeighborError>> {
        Ok(Self::from_text(&fs::read_to_string(path)?))
    }
}

/// Top-`k` most cosine-similar other words for every query word. Zero-norm
/// candidates are never listed.
pub fn build_neighbor_table<'a>(
    emb: &EmbeddingTable,
    query_words: impl IntoIterator<Item = &'a str>,
    k: usize,
) -> Result<NeighborTable, NeighborError> {
    if k == 0 {
        return Err(NeighborError::ZeroK);
    }
    let candidates: Vec<(&str, &[f64], f64)> = emb
        .iter()
        .map(|(w, v)| (w, v, norm(v)))
        .filter(|&(_, _, n)| n > 0.0)
        .collect();

    let mut entries = BTreeMap::new();
    for q in query_words {
        let qv = emb
            .get(q)
            .ok_or_else(|| NeighborError::MissingWord(q.to_string()))?;
        let qn = norm(qv);
        if qn == 0.0 {
            return Err(NeighborError::ZeroNormQuery(q.to_string()));
        }
        let mut scored: Vec<(String, f64)> = candidates
            .iter()
            .filter(|(w, _, _)| *w != q)
            .map(|&(w, v, n)| (w.to_string(), (dot(qv, v) / (qn * n)).clamp(-1.0, 1.0)))
            .collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_by(rank);
        entries.insert(q.to_string(), scored);
    }
    Ok(NeighborTable { k, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len());
        for (w, v) in rows {
            t.insert(*w, v.to_vec());
        }
        t
    }

    #[test]
    fn cosine_examples() {
        let u = [0.3, -1.2, 4.0];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.7071067811865475
        );
        assert_eq!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(NeighborError::DimMismatch(1, 2))
        );
        assert_eq!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(NeighborError::ZeroNorm)
        );
    }

    #[test]
    fn ranks_by_cosine() {
        let emb = table(&[("a", &[1.0, 0.0]), ("b", &[0.9, 0.1]), ("c", &[0.0, 1.0])]);
        let nb = build_neighbor_table(&emb, ["a"], 2).unwrap();
        let list = nb.get("a").unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].0, "b");
        assert_eq!(list[1].0, "c");
        // brute force: cos(a,b) = 0.9 / sqrt(0.82)
        assert!((list[0].1 - 0.9 / 0.82f64.sqrt()).abs() < 1e-15);
        assert_eq!(list[1].1, 0.0);
    }

    #[test]
    fn single_word_vocabulary() {
        let emb = table(&[("a", &[1.0, 2.0])]);
        let nb = build_neighbor_table(&emb, ["a"], 5).unwrap();
        assert!(nb.get("a").unwrap().is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let emb = table(&[
            ("q", &[1.0, 0.0]),
            ("zz", &[2.0, 1.0]),
            ("aa", &[2.0, 1.0]),
            ("mm", &[2.0, 1.0]),
        ]);
        let nb = build_neighbor_table(&emb, ["q"], 2).unwrap();
        let words: Vec<_> = nb
            .get("q")
            .unwrap()
            .iter()
            .map(|(w, _)| w.as_str())
            .collect();
        assert_eq!(words, ["aa", "mm"]);
    }

    #[test]
    fn query_errors() {
        let emb = table(&[("a", &[1.0, 0.0]), ("z", &[0.0, 0.0])]);
        assert_eq!(
            build_neighbor_table(&emb, ["b"], 5),
            Err(NeighborError::MissingWord("b".into()))
        );
        assert_eq!(
            build_neighbor_table(&emb, ["z"], 5),
            Err(NeighborError::ZeroNormQuery("z".into()))
        );
        // zero-norm candidates are skipped
        let nb = build_neighbor_table(&emb, ["a"], 5).unwrap();
        assert!(nb.get("a").unwrap().is_empty());
    }

    #[test]
    fn cache_format() {
        let emb = table(&[("a", &[1.0, 0.0]), ("b", &[1.0, 1.0]), ("c", &[-1.0, 0.2])]);
        let nb = build_neighbor_table(&emb, ["a", "c"], 5).unwrap();
        let text = nb.to_text();
        assert_eq!(
            text,
            "a  b:0.707106781  c:-0.980580676\nc  b:-0.554700196  a:-0.980580676\n"
        );
        let back = NeighborTable::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(NeighborTable::from_text(&back.to_text()).unwrap(), back);
        assert!(NeighborTable::from_text("a  b0.5").is_err());
    }
}

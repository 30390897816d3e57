//! Word-, sentence- and frame-level mixing of triples.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, FrameSeq, Span, Triple};
use crate::neighbors::NeighborTable;
use crate::rng::{self, Rng};

pub const DEFAULT_LAMBDA: f64 = 0.4;
pub const DEFAULT_MAX_CONCAT_FRAMES: usize = 3000;

/// Rejection-sampling budget per sentence pair.
const PAIR_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("same speaker {0:?} on both sides")]
    SameSpeaker(String),
    #[error("frame dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("concatenation has {total} frames, cap is {cap}")]
    OverCap { total: usize, cap: usize },
    #[error("corpus too small: need at least {need} items, have {have}")]
    CorpusTooSmall { need: usize, have: usize },
    #[error("corpus has fewer than two speakers")]
    SingleSpeaker,
    #[error("lambda must lie strictly inside (0, 1), got {0}")]
    BadLambda(f64),
    #[error("mix_portion must be finite and non-negative, got {0}")]
    BadPortion(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    pub lambda: f64,
    pub k_neighbors: usize,
    pub rng_seed: u64,
    /// Augmented items requested per original item.
    pub mix_portion: f64,
    pub max_concat_frames: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            k_neighbors: crate::neighbors::DEFAULT_K,
            rng_seed: 0,
            mix_portion: 1.0,
            max_concat_frames: DEFAULT_MAX_CONCAT_FRAMES,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<(), MixError> {
        check_lambda(self.lambda)?;
        if !self.mix_portion.is_finite() || self.mix_portion < 0.0 {
            return Err(MixError::BadPortion(self.mix_portion));
        }
        Ok(())
    }

    /// `ceil(mix_portion * n)`.
    pub fn requested(&self, n: usize) -> usize {
        (self.mix_portion * n as f64).ceil() as usize
    }
}

fn check_lambda(lambda: f64) -> Result<(), MixError> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(MixError::BadLambda(lambda))
    }
}

pub fn is_noun(pos: &str) -> bool {
    pos.starts_with("NOUN") || pos.starts_with("PROPN")
}

/// Where one noun token occurs in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordOccurrence {
    pub triple_id: String,
    pub src_index: usize,
    pub frame_span: Span,
    pub tgt_indices: BTreeSet<usize>,
}

/// Noun occurrences keyed by word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordInventory {
    pub entries: BTreeMap<String, Vec<WordOccurrence>>,
}

impl WordInventory {
    pub fn get(&self, word: &str) -> Option<&[WordOccurrence]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_word_inventory(c: &Corpus) -> WordInventory {
    let mut entries: BTreeMap<String, Vec<WordOccurrence>> = BTreeMap::new();
    for t in c {
        for (i, (word, pos)) in t.src_tokens.iter().zip(&t.src_pos).enumerate() {
            if !is_noun(pos) {
                continue;
            }
            entries
                .entry(word.clone())
                .or_default()
                .push(WordOccurrence {
                    triple_id: t.id.clone(),
                    src_index: i,
                    frame_span: t.time_align[i],
                    tgt_indices: t.word_align.targets_of(i),
                });
        }
    }
    WordInventory { entries }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum WordMix {
    Mixed(Triple),
    Skip,
}

/// Replaces one randomly chosen noun of `t` (its frames, token and aligned
/// target tokens) with the first neighbor word that occurs as a noun in some
/// other triple of `corpus`. The donor occurrence is drawn uniformly.
pub fn mix_word(
    t: &Triple,
    corpus: &Corpus,
    inv: &WordInventory,
    nb: &NeighborTable,
    rng: &mut Rng,
) -> WordMix {
    let nouns: Vec<usize> = (0..t.src_pos.len())
        .filter(|&i| is_noun(&t.src_pos[i]))
        .collect();
    if nouns.is_empty() {
        return WordMix::Skip;
    }
    let i = nouns[rng.gen_range(0..nouns.len())];
    let Some(list) = nb.get(&t.src_tokens[i]) else {
        return WordMix::Skip;
    };
    for (word, _) in list {
        let Some(occs) = inv.get(word) else { continue };
        let donors: Vec<(&WordOccurrence, &Triple)> = occs
            .iter()
            .filter(|o| o.triple_id != t.id)
            .filter_map(|o| corpus.get(&o.triple_id).map(|d| (o, d)))
            .filter(|(_, d)| d.frames.dim() == t.frames.dim())
            .collect();
        if donors.is_empty() {
            continue;
        }
        let (occ, donor) = donors[rng.gen_range(0..donors.len())];
        return match splice_word(t, i, word, donor, occ) {
            Some(out) => WordMix::Mixed(out),
            None => WordMix::Skip,
        };
    }
    WordMix::Skip
}

/// Splices the donor occurrence into position `i` of `t`. Returns `None`
/// when the spliced translation would be empty.
pub fn splice_word(
    t: &Triple,
    i: usize,
    word: &str,
    donor: &Triple,
    occ: &WordOccurrence,
) -> Option<Triple> {
    let span = t.time_align[i];
    let donor_frames = donor.frames.slice(occ.frame_span);
    let dlen = donor_frames.len();
    let frames = FrameSeq::concat(&[
        &t.frames.slice(Span::new(0, span.start)),
        &donor_frames,
        &t.frames.slice(Span::new(span.end, t.frames.len())),
    ]);

    let time_align = t
        .time_align
        .iter()
        .enumerate()
        .map(|(k, s)| match k.cmp(&i) {
            std::cmp::Ordering::Less => *s,
            std::cmp::Ordering::Equal => Span::new(span.start, span.start + dlen),
            std::cmp::Ordering::Greater => {
                Span::new(s.start - span.len() + dlen, s.end - span.len() + dlen)
            }
        })
        .collect();

    // Target side: delete the tokens aligned to `i`, insert the donor's
    // aligned tokens at the first deleted position. An unaligned word keeps
    // the translation as is.
    let removed = t.word_align.targets_of(i);
    let inserted: Vec<String> = if removed.is_empty() {
        Vec::new()
    } else {
        occ.tgt_indices
            .iter()
            .map(|&j| donor.tgt_tokens[j].clone())
            .collect()
    };
    let first = removed.first().copied();
    let new_index = |j: usize| match first {
        Some(a0) if j > a0 => j - removed.range(..j).count() + inserted.len(),
        _ => j,
    };
    let mut tgt_tokens = Vec::with_capacity(t.tgt_tokens.len() + inserted.len());
    for (j, tok) in t.tgt_tokens.iter().enumerate() {
        if Some(j) == first {
            tgt_tokens.extend(inserted.iter().cloned());
        }
        if !removed.contains(&j) {
            tgt_tokens.push(tok.clone());
        }
    }
    if tgt_tokens.is_empty() {
        return None;
    }

    let mut word_align: crate::alignio::WordAlignment = t
        .word_align
        .iter()
        .filter(|&(s, g)| s != i && !removed.contains(&g))
        .map(|(s, g)| (s, new_index(g)))
        .collect();
    if let Some(a0) = first {
        for k in 0..inserted.len() {
            word_align.insert(i, a0 + k);
        }
    }

    let mut src_tokens = t.src_tokens.clone();
    src_tokens[i] = word.to_string();
    let mut src_pos = t.src_pos.clone();
    src_pos[i] = donor.src_pos[occ.src_index].clone();

    Some(Triple {
        id: format!("{}/word", t.id),
        speaker: t.speaker.clone(),
        frames,
        frames_path: None,
        src_tokens,
        src_pos,
        tgt_tokens,
        time_align,
        word_align,
    })
}

/// Concatenates two triples from different speakers.
pub fn mix_sentence(a: &Triple, b: &Triple, max_concat_frames: usize) -> Result<Triple, MixError> {
    if a.speaker == b.speaker {
        return Err(MixError::SameSpeaker(a.speaker.clone()));
    }
    if a.frames.dim() != b.frames.dim() {
        return Err(MixError::DimMismatch(a.frames.dim(), b.frames.dim()));
    }
    let total = a.frames.len() + b.frames.len();
    if total > max_concat_frames {
        return Err(MixError::OverCap {
            total,
            cap: max_concat_frames,
        });
    }
    let ta = a.frames.len();
    let (na, ma) = (a.src_tokens.len(), a.tgt_tokens.len());
    let cat = |x: &[String], y: &[String]| -> Vec<String> { x.iter().chain(y).cloned().collect() };
    Ok(Triple {
        id: format!("{}+{}", a.id, b.id),
        speaker: format!("{}+{}", a.speaker, b.speaker),
        frames: FrameSeq::concat(&[&a.frames, &b.frames]),
        frames_path: None,
        src_tokens: cat(&a.src_tokens, &b.src_tokens),
        src_pos: cat(&a.src_pos, &b.src_pos),
        tgt_tokens: cat(&a.tgt_tokens, &b.tgt_tokens),
        time_align: a
            .time_align
            .iter()
            .copied()
            .chain(b.time_align.iter().map(|s| s.shifted(ta)))
            .collect(),
        word_align: a
            .word_align
            .iter()
            .chain(b.word_align.shifted(na, ma).iter())
            .collect(),
    })
}

/// `lambda * s_i + (1 - lambda) * s_j` frame by frame, zero-padding the
/// shorter sequence.
pub fn mix_frames(s_i: &FrameSeq, s_j: &FrameSeq, lambda: f64) -> Result<FrameSeq, MixError> {
    check_lambda(lambda)?;
    if s_i.dim() != s_j.dim() {
        return Err(MixError::DimMismatch(s_i.dim(), s_j.dim()));
    }
    let len = s_i.len().max(s_j.len());
    let mut out = Array2::zeros((len, s_i.dim()));
    let mu = 1.0 - lambda;
    let (a, b) = (s_i.view(), s_j.view());
    let overlap = s_i.len().min(s_j.len());
    Zip::from(out.slice_mut(ndarray::s![..overlap, ..]))
        .and(a.slice(ndarray::s![..overlap, ..]))
        .and(b.slice(ndarray::s![..overlap, ..]))
        .for_each(|o, &x, &y| *o = lambda * x + mu * y);
    for t in overlap..s_i.len() {
        out.row_mut(t).assign(&a.row(t).mapv(|x| lambda * x));
    }
    for t in overlap..s_j.len() {
        out.row_mut(t).assign(&b.row(t).mapv(|y| mu * y));
    }
    Ok(FrameSeq::new(out).expect("finite inputs give finite mixtures"))
}

/// One frame-level mixture trained against both targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMixedExample {
    pub id_i: String,
    pub id_j: String,
    pub lambda: f64,
    pub frames_mixed: FrameSeq,
    pub frames_path: Option<String>,
    pub tgt_i: Vec<String>,
    pub tgt_j: Vec<String>,
}

/// Draws `ceil(mix_portion * |c|)` unordered pairs and emits each pair twice,
/// with weights `lambda` and `1 - lambda`.
pub fn make_frame_mixed_set(
    c: &Corpus,
    cfg: &MixConfig,
) -> Result<Vec<FrameMixedExample>, MixError> {
    cfg.validate()?;
    let n = c.len();
    if n < 2 {
        return Err(MixError::CorpusTooSmall { need: 2, have: n });
    }
    let mut rng = rng::seeded(cfg.rng_seed);
    let items = c.items();
    let pairs = cfg.requested(n);
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let x = rng.gen_range(0..n);
        let mut y = rng.gen_range(0..n - 1);
        if y >= x {
            y += 1;
        }
        let (a, b) = (&items[x.min(y)], &items[x.max(y)]);
        for lambda in [cfg.lambda, 1.0 - cfg.lambda] {
            out.push(FrameMixedExample {
                id_i: a.id.clone(),
                id_j: b.id.clone(),
                lambda,
                frames_mixed: mix_frames(&a.frames, &b.frames, lambda)?,
                frames_path: None,
                tgt_i: a.tgt_tokens.clone(),
                tgt_j: b.tgt_tokens.clone(),
            });
        }
    }
    Ok(out)
}

/// Result of a corpus-level word or sentence pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub items: Vec<Triple>,
    pub requested: usize,
    pub skipped: usize,
}

impl Augmented {
    pub fn produced(&self) -> usize {
        self.items.len()
    }
}

/// Runs [`mix_word`] over the corpus `ceil(mix_portion * |c|)` times, cycling
/// through the items. Each attempt draws from its own substream keyed by
/// the item id and the cycle number.
pub fn augment_words(
    c: &Corpus,
    inv: &WordInventory,
    nb: &NeighborTable,
    cfg: &MixConfig,
) -> Result<Augmented, MixError> {
    cfg.validate()?;
    let requested = if c.is_empty() {
        0
    } else {
        cfg.requested(c.len())
    };
    let mut items = Vec::new();
    for k in 0..requested {
        let t = &c.items()[k % c.len()];
        let round = (k / c.len()) as u64;
        let mut rng = rng::substream(cfg.rng_seed, &t.id, round);
        if let WordMix::Mixed(mut out) = mix_word(t, c, inv, nb, &mut rng) {
            if round > 0 {
                out.id = format!("{}/word{round}", t.id);
            }
            items.push(out);
        }
    }
    Ok(Augmented {
        skipped: requested - items.len(),
        requested,
        items,
    })
}

/// Concatenates `ceil(mix_portion * |c|)` distinct ordered pairs drawn
/// uniformly among different-speaker pairs under the frame cap.
pub fn augment_sentences(c: &Corpus, cfg: &MixConfig) -> Result<Augmented, MixError> {
    cfg.validate()?;
    let n = c.len();
    if n < 2 {
        return Err(MixError::CorpusTooSmall { need: 2, have: n });
    }
    let speakers: HashSet<&str> = c.iter().map(|t| t.speaker.as_str()).collect();
    if speakers.len() < 2 {
        return Err(MixError::SingleSpeaker);
    }
    let requested = cfg.requested(n);
    let items_in = c.items();
    let mut rng = rng::seeded(cfg.rng_seed);
    let mut used = HashSet::new();
    let mut items = Vec::with_capacity(requested);
    for _ in 0..requested {
        for _ in 0..PAIR_ATTEMPTS {
            let x = rng.gen_range(0..n);
            let mut y = rng.gen_range(0..n - 1);
            if y >= x {
                y += 1;
            }
            if used.contains(&(x, y)) {
                continue;
            }
            if let Ok(t) = mix_sentence(&items_in[x], &items_in[y], cfg.max_concat_frames) {
                used.insert((x, y));
                items.push(t);
                break;
            }
        }
    }
    Ok(Augmented {
        skipped: requested - items.len(),
        requested,
        items,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameMixedRecord {
    id_i: String,
    id_j: String,
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f64>>>,
    tgt_i: Vec<String>,
    tgt_j: Vec<String>,
}

/// Canonical frame-mixed manifest line (no trailing newline).
pub fn frame_mixed_line(ex: &FrameMixedExample) -> String {
    serde_json::to_string(&FrameMixedRecord {
        id_i: ex.id_i.clone(),
        id_j: ex.id_j.clone(),
        lambda: ex.lambda,
        frames_path: ex.frames_path.clone(),
        frames: ex.frames_path.is_none().then(|| ex.frames_mixed.rows()),
        tgt_i: ex.tgt_i.clone(),
        tgt_j: ex.tgt_j.clone(),
    })
    .expect("serializable record")
}

pub fn load_frame_mixed_manifest(
    path: impl AsRef<Path>,
) -> Result<Vec<FrameMixedExample>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| CorpusError::Malformed { line: line_no, msg };
        let rec: FrameMixedRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if check_lambda(rec.lambda).is_err() {
            return Err(malformed(format!("lambda {} outside (0, 1)", rec.lambda)));
        }
        if rec.tgt_i.is_empty() || rec.tgt_j.is_empty() {
            return Err(malformed("empty target sequence".into()));
        }
        let id = format!("{}*{}", rec.id_i, rec.id_j);
        let frames_err = |source| CorpusError::Frames {
            line: line_no,
            id: id.clone(),
            source,
        };
        let frames_mixed = match (&rec.frames_path, &rec.frames) {
            (Some(p), None) => crate::corpus::read_frames(base.join(p)).map_err(frames_err)?,
            (None, Some(rows)) => FrameSeq::from_rows(rows).map_err(frames_err)?,
            _ => {
                return Err(malformed(
                    "need exactly one of frames_path and frames".into(),
                ))
            }
        };
        out.push(FrameMixedExample {
            id_i: rec.id_i,
            id_j: rec.id_j,
            lambda: rec.lambda,
            frames_mixed,
            frames_path: rec.frames_path,
            tgt_i: rec.tgt_i,
            tgt_j: rec.tgt_j,
        });
    }
    Ok(out)
}

//! Independent oracles and random instance generators for tests.
//!
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmix_core::alignio::{EmbeddingTable, WordAlignment};
use stmix_core::corpus::{FrameSeq, Span, Triple};
use stmix_core::mixers::WordOccurrence;
use stmix_core::toymodel::ToyParams;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for per-coordinate relative error, so that entries
/// whose true gradient is ~0 are compared at an absolute scale of 1e-6.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

pub fn max_rel_err<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

/// Central differences of `f` w.r.t. every entry of a matrix.
pub fn fd_matrix(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let mut plus = x.clone();
        plus[idx] += FD_STEP;
        let mut minus = x.clone();
        minus[idx] -= FD_STEP;
        g[idx] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
    }
    g
}

/// Central differences of `f` w.r.t. every model parameter, flattened in
/// tensor order.
pub fn fd_params(f: impl Fn(&ToyParams) -> f64, p: &ToyParams) -> Vec<f64> {
    let mut out = Vec::new();
    let mut work = p.clone();
    for t in 0..11 {
        let len = p.tensors()[t].len();
        for k in 0..len {
            let orig = p.tensors()[t].iter().nth(k).copied().unwrap();
            set_param(&mut work, t, k, orig + FD_STEP);
            let plus = f(&work);
            set_param(&mut work, t, k, orig - FD_STEP);
            let minus = f(&work);
            set_param(&mut work, t, k, orig);
            out.push((plus - minus) / (2.0 * FD_STEP));
        }
    }
    out
}

fn set_param(p: &mut ToyParams, tensor: usize, k: usize, v: f64) {
    let mut views = p.tensors_mut();
    *views[tensor].iter_mut().nth(k).unwrap() = v;
}

pub fn flat(p: &ToyParams) -> Vec<f64> {
    p.tensors()
        .iter()
        .flat_map(|t| t.iter().copied().collect::<Vec<_>>())
        .collect()
}

/// Softmax by direct exponentiation in extended form, for oracles.
pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// JSD via entropies: `H((p+q)/2) - H(p)/2 - H(q)/2`.
pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let h = |d: &[f64]| -> f64 {
        -d.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * x.ln())
            .sum::<f64>()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    h(&m) - 0.5 * h(p) - 0.5 * h(q)
}

/// Exhaustive neighbor list: score every other nonzero word, sort all of
/// them, keep the first `k`.
pub fn neighbor_oracle(emb: &EmbeddingTable, q: &str, k: usize) -> Vec<(String, f64)> {
    let qv = emb.get(q).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = emb
        .iter()
        .filter(|(w, v)| *w != q && norm(v) > 0.0)
        .map(|(w, v)| {
            let dot: f64 = qv.iter().zip(v).map(|(a, b)| a * b).sum();
            (w.to_string(), (dot / (norm(qv) * norm(v))).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Label {
    Orig(usize),
    Donor(usize),
}

/// Word splice by segment reassembly: label every frame and target token
/// with its origin, rebuild the sequences, and recover the alignments by
/// looking labels up in the rebuilt sequences. Returns `None` when the
/// translation would come out empty.
pub fn splice_oracle(
    t: &Triple,
    i: usize,
    word: &str,
    donor: &Triple,
    occ: &WordOccurrence,
) -> Option<Triple> {
    let span = t.time_align[i];
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut owner: Vec<Option<usize>> = Vec::new();
    let owner_of = |f: usize| t.time_align.iter().position(|s| s.start <= f && f < s.end);
    for f in 0..t.frames.len() {
        if f == span.start {
            for d in occ.frame_span.start..occ.frame_span.end {
                rows.push(donor.frames.row(d).to_vec());
                owner.push(Some(i));
            }
        }
        if f >= span.start && f < span.end {
            continue;
        }
        rows.push(t.frames.row(f).to_vec());
        owner.push(owner_of(f));
    }
    let time_align: Vec<Span> = (0..t.src_tokens.len())
        .map(|k| {
            let first = owner.iter().position(|&o| o == Some(k)).unwrap();
            let last = owner.iter().rposition(|&o| o == Some(k)).unwrap();
            Span::new(first, last + 1)
        })
        .collect();

    let removed: BTreeSet<usize> = t
        .word_align
        .iter()
        .filter(|&(s, _)| s == i)
        .map(|(_, g)| g)
        .collect();
    let mut labels = Vec::new();
    for j in 0..t.tgt_tokens.len() {
        if Some(&j) == removed.iter().next() {
            labels.extend((0..occ.tgt_indices.len()).map(Label::Donor));
        }
        if !removed.contains(&j) {
            labels.push(Label::Orig(j));
        }
    }
    if labels.is_empty() {
        return None;
    }
    let donor_tgt: Vec<usize> = occ.tgt_indices.iter().copied().collect();
    let tgt_tokens: Vec<String> = labels
        .iter()
        .map(|l| match *l {
            Label::Orig(j) => t.tgt_tokens[j].clone(),
            Label::Donor(k) => donor.tgt_tokens[donor_tgt[k]].clone(),
        })
        .collect();
    let pos: HashMap<Label, usize> = labels.iter().enumerate().map(|(n, l)| (*l, n)).collect();
    let mut word_align = WordAlignment::new();
    for (s, g) in t.word_align.iter() {
        if s == i {
            continue;
        }
        if let Some(&n) = pos.get(&Label::Orig(g)) {
            word_align.insert(s, n);
        }
    }
    for k in 0..occ.tgt_indices.len() {
        if let Some(&n) = pos.get(&Label::Donor(k)) {
            word_align.insert(i, n);
        }
    }
    let mut src_tokens = t.src_tokens.clone();
    src_tokens[i] = word.to_string();
    let mut src_pos = t.src_pos.clone();
    src_pos[i] = donor.src_pos[occ.src_index].clone();
    Some(Triple {
        id: format!("{}/word", t.id),
        speaker: t.speaker.clone(),
        frames: FrameSeq::from_rows(&rows).unwrap(),
        frames_path: None,
        src_tokens,
        src_pos,
        tgt_tokens,
        time_align,
        word_align,
    })
}

/// A random valid triple: 1-6 words with 1-4 frame spans separated by
/// 0-2 frame gaps, 1-7 target tokens, random many-to-many alignment.
pub fn random_triple(rng: &mut ChaCha8Rng, id: &str, dim: usize) -> Triple {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=7);
    let mut time_align = Vec::with_capacity(n);
    let mut cursor = rng.gen_range(0..=2);
    for _ in 0..n {
        let len = rng.gen_range(1..=4);
        time_align.push(Span::new(cursor, cursor + len));
        cursor += len + rng.gen_range(0..=2);
    }
    let frames = cursor.max(1);
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect();
    let mut word_align = WordAlignment::new();
    for s in 0..n {
        for g in 0..m {
            if rng.gen_bool(0.25) {
                word_align.insert(s, g);
            }
        }
    }
    let tags = ["NOUN", "PROPN", "VERB", "DET"];
    Triple {
        id: id.to_string(),
        speaker: format!("spk{}", rng.gen_range(0..3)),
        frames: FrameSeq::from_rows(&rows).unwrap(),
        frames_path: None,
        src_tokens: (0..n).map(|k| format!("{id}_s{k}")).collect(),
        src_pos: (0..n)
            .map(|_| tags.choose(rng).unwrap().to_string())
            .collect(),
        tgt_tokens: (0..m).map(|k| format!("{id}_t{k}")).collect(),
        time_align,
        word_align,
    }
}

pub fn random_frames(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> FrameSeq {
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    FrameSeq::from_rows(&rows).unwrap()
}

pub fn random_logits(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, vocab), |_| rng.gen_range(-3.0..3.0))
}

/// Parameters drawn uniformly from `[-scale, scale]`.
pub fn random_params(rng: &mut ChaCha8Rng, like: &ToyParams, scale: f64) -> ToyParams {
    let mut p = like.clone();
    for mut t in p.tensors_mut() {
        t.mapv_inplace(|_| rng.gen_range(-scale..scale));
    }
    p
}

/// Distance in units in the last place between two finite doubles.
pub fn ulps(a: f64, b: f64) -> u64 {
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

//! Deterministic synthetic corpora for tests, benchmarks and smoke runs.
//!
//! Each source word has a prototype frame vector; an utterance holds 2-4
//! distinct words in ascending id order, each lasting 2-5 noisy frames.
//! The translation maps every word through a fixed permutation, aligned
//! one-to-one.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;

use crate::alignio::{EmbeddingTable, WordAlignment};
use crate::corpus::{Corpus, FrameSeq, Span, Triple};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub triples: usize,
    /// Source and target vocabulary size.
    pub vocab: usize,
    pub frame_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub speakers: usize,
    pub noise: f64,
    pub seed: u64,
    /// Words with id below this are tagged NOUN.
    pub nouns: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            triples: 64,
            vocab: 16,
            frame_dim: 4,
            min_frames: 5,
            max_frames: 20,
            speakers: 8,
            noise: 0.1,
            seed: 0,
            nouns: 10,
        }
    }
}

pub fn src_word(k: usize) -> String {
    format!("w{k:02}")
}

pub fn tgt_word(k: usize, vocab: usize) -> String {
    // 7 is coprime with any vocabulary size that is not a multiple of 7.
    format!("t{:02}", (7 * k + 3) % vocab)
}

fn pos_tag(k: usize, nouns: usize) -> &'static str {
    if k < nouns {
        "NOUN"
    } else if k.is_multiple_of(2) {
        "VERB"
    } else {
        "DET"
    }
}

/// Frame dimension prototypes, one row per source word.
pub fn prototypes(cfg: &SynthConfig) -> Array2<f64> {
    let mut rng = rng::substream(cfg.seed, "prototypes", 0);
    Array2::from_shape_fn((cfg.vocab, cfg.frame_dim), |_| rng.gen_range(-1.0..1.0))
}

pub fn corpus(cfg: &SynthConfig) -> Corpus {
    assert!(cfg.vocab >= 4 && cfg.frame_dim >= 1 && cfg.speakers >= 1);
    assert!(cfg.min_frames <= cfg.max_frames && cfg.max_frames >= 4);
    let protos = prototypes(cfg);
    let mut rng = rng::substream(cfg.seed, "corpus", 0);
    let mut items = Vec::with_capacity(cfg.triples);
    for n in 0..cfg.triples {
        let (words, durations) = loop {
            let len = rng.gen_range(2..=4usize);
            let mut words = sample(&mut rng, cfg.vocab, len).into_vec();
            words.sort_unstable();
            let durations: Vec<usize> = (0..len).map(|_| rng.gen_range(2..=5)).collect();
            let total: usize = durations.iter().sum();
            if (cfg.min_frames..=cfg.max_frames).contains(&total) {
                break (words, durations);
            }
        };
        let mut rows = Vec::new();
        let mut time_align = Vec::with_capacity(words.len());
        for (&w, &d) in words.iter().zip(&durations) {
            let start = rows.len();
            for _ in 0..d {
                rows.push(
                    protos
                        .row(w)
                        .iter()
                        .map(|&x| x + cfg.noise * rng.gen_range(-1.0..1.0))
                        .collect::<Vec<f64>>(),
                );
            }
            time_align.push(Span::new(start, rows.len()));
        }
        items.push(Triple {
            id: format!("syn{n:04}"),
            speaker: format!("spk{}", n % cfg.speakers),
            frames: FrameSeq::from_rows(&rows).expect("finite rectangular frames"),
            frames_path: None,
            src_tokens: words.iter().map(|&w| src_word(w)).collect(),
            src_pos: words
                .iter()
                .map(|&w| pos_tag(w, cfg.nouns).to_string())
                .collect(),
            tgt_tokens: words.iter().map(|&w| tgt_word(w, cfg.vocab)).collect(),
            time_align,
            word_align: (0..words.len()).map(|i| (i, i)).collect::<WordAlignment>(),
        });
    }
    Corpus::new(items).expect("unique synthetic ids")
}

/// Random word vectors for every source word.
pub fn embeddings(cfg: &SynthConfig, dim: usize) -> EmbeddingTable {
    let mut rng = rng::substream(cfg.seed, "embeddings", 0);
    let mut t = EmbeddingTable::new(dim);
    for k in 0..cfg.vocab {
        t.insert(
            src_word(k),
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_triple;

    #[test]
    fn synthetic_corpus_is_valid_and_deterministic() {
        let cfg = SynthConfig::default();
        let c = corpus(&cfg);
        assert_eq!(c.len(), 64);
        for t in &c {
            assert!(validate_triple(t).is_empty(), "{}", t.id);
            assert!((5..=20).contains(&t.frames.len()));
            assert_eq!(t.frames.dim(), 4);
        }
        assert_eq!(corpus(&cfg), c);
        let other = corpus(&SynthConfig { seed: 1, ..cfg });
        assert_ne!(other, c);
    }
}

//! Input generators for the `kernels` benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmix_core::toymodel::{init_params, ModelDims, PairedExample, SpeechExample};
use stmix_core::{EmbeddingTable, FrameSeq, ToyParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn embeddings(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    let mut t = EmbeddingTable::new(dim);
    for w in 0..vocab {
        t.insert(
            format!("w{w}"),
            (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
        );
    }
    t
}

pub fn frames(len: usize, dim: usize, seed: u64) -> FrameSeq {
    let mut r = rng(seed);
    FrameSeq::new(Array2::from_shape_fn((len, dim), |_| {
        r.gen_range(-1.0..1.0)
    }))
    .expect("finite frames")
}

pub fn logits(len: usize, vocab: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((len, vocab), |_| r.gen_range(-3.0..3.0))
}

pub fn targets(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen_range(0..vocab)).collect()
}

/// Model parameters plus one batch of speech and paired examples.
pub fn model_batch(
    dims: ModelDims,
    batch: usize,
    frames_len: usize,
    tgt_len: usize,
) -> (ToyParams, Vec<SpeechExample>, Vec<PairedExample>) {
    let p = init_params(0, dims).expect("valid dims");
    let mut speech = Vec::with_capacity(batch);
    let mut paired = Vec::with_capacity(batch);
    for b in 0..batch as u64 {
        let f = frames(frames_len, dims.frame_dim, b).into_array();
        let y = targets(tgt_len, dims.tgt_vocab, 1000 + b);
        let x = targets(tgt_len, dims.src_vocab, 2000 + b);
        speech.push(SpeechExample {
            frames: f.clone(),
            y: y.clone(),
        });
        paired.push(PairedExample { frames: f, x, y });
    }
    (p, speech, paired)
}

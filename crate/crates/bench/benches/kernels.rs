use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use stmix_bench::{embeddings, frames, logits, model_batch, targets};
use stmix_core::mixers::{make_frame_mixed_set, mix_frames, MixConfig};
use stmix_core::neighbors::build_neighbor_table;
use stmix_core::objectives::{cross_entropy, jsd_sequence, mix_loss};
use stmix_core::synth::{self, SynthConfig};
use stmix_core::toymodel::{loss_and_grad, Batch, LossOptions, ModelDims, Objective};

fn neighbors(c: &mut Criterion) {
    let mut g = c.benchmark_group("neighbors");
    for vocab in [1_000, 10_000] {
        let emb = embeddings(vocab, 100, 1);
        let queries: Vec<String> = (0..50).map(|w| format!("w{w}")).collect();
        g.bench_with_input(
            BenchmarkId::new("top5_50_queries", vocab),
            &emb,
            |b, emb| {
                b.iter(|| build_neighbor_table(emb, queries.iter().map(String::as_str), 5).unwrap())
            },
        );
    }
    g.finish();
}

fn mixers(c: &mut Criterion) {
    let (a, b) = (frames(600, 80, 1), frames(500, 80, 2));
    c.bench_function("mix_frames_600x80", |bn| {
        bn.iter(|| mix_frames(black_box(&a), black_box(&b), 0.4).unwrap())
    });
    let corpus = synth::corpus(&SynthConfig {
        triples: 256,
        ..SynthConfig::default()
    });
    c.bench_function("frame_mixed_set_256", |bn| {
        bn.iter(|| make_frame_mixed_set(black_box(&corpus), &MixConfig::default()).unwrap())
    });
}

fn objectives(c: &mut Criterion) {
    let (l, v) = (50, 1000);
    let (a, b) = (logits(l, v, 1), logits(l, v, 2));
    let y = targets(l, v, 3);
    c.bench_function("cross_entropy_50x1000", |bn| {
        bn.iter(|| cross_entropy(black_box(&a), &y).unwrap())
    });
    c.bench_function("mix_loss_50x1000", |bn| {
        bn.iter(|| mix_loss(black_box(&a), &y, &b, &y, 0.4).unwrap())
    });
    c.bench_function("jsd_sequence_50x1000", |bn| {
        bn.iter(|| jsd_sequence(black_box(&a), &b).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let dims = ModelDims {
        frame_dim: 40,
        hidden: 64,
        src_vocab: 200,
        tgt_vocab: 200,
    };
    let (p, speech, paired) = model_batch(dims, 16, 100, 12);
    let opts = LossOptions::default();
    let mut g = c.benchmark_group("loss_and_grad_b16");
    let ce = Batch {
        speech: &speech,
        ..Default::default()
    };
    g.bench_function("ce", |bn| {
        bn.iter(|| loss_and_grad(&p, &ce, Objective::Ce, &opts).unwrap())
    });
    let st2 = Batch {
        paired: &paired,
        ..Default::default()
    };
    g.bench_function("stage2", |bn| {
        bn.iter(|| loss_and_grad(&p, &st2, Objective::Stage2, &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, neighbors, mixers, objectives, model);
criterion_main!(benches);

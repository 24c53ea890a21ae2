use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;

use dtn_core::config::TrainConfig;
use dtn_core::data::make_batches;
use dtn_core::evaluation::bleu;
use dtn_core::experiment::synthetic_data;
use dtn_core::nmt::init_params;
use dtn_core::optim::Adam;
use dtn_core::supervision::{two_phase_step, Phase, StepCtx, Unified};
use dtn_core::{Rng, Tape, Tensor};

fn matmul(c: &mut Criterion) {
    let mut rng = Rng::seed_from_u64(0);
    let a = Tensor::uniform([64, 128], 1.0, &mut rng);
    let b = Tensor::uniform([128, 64], 1.0, &mut rng);
    c.bench_function("matmul 64x128x64 forward+backward", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let x = t.leaf(a.clone().with_requires_grad());
            let y = t.leaf(b.clone().with_requires_grad());
            let z = t.matmul(x, y).unwrap();
            let s = t.sum(z);
            t.backward(s).unwrap();
            black_box(t.grad(x).map(|g| g[0]))
        })
    });
}

fn training_step(c: &mut Criterion) {
    let cfg = TrainConfig::resolve(
        None,
        &[
            "model.d_model=32".into(),
            "model.n_heads=2".into(),
            "model.d_ffn=64".into(),
            "model.n_enc_layers=1".into(),
            "model.n_dec_layers=1".into(),
        ],
    )
    .unwrap();
    let data = synthetic_data(&cfg).unwrap();
    let batch = make_batches(&data.train[0], cfg.data.batch_tokens).unwrap().remove(0);
    let mut params = init_params(&cfg.model, &mut Rng::seed_from_u64(1)).unwrap();
    let mut adam = Adam::new();
    let mut rng = Rng::seed_from_u64(2);
    let model = Unified {
        cfg: &cfg.model,
        bank: None,
        sup: &cfg.supervision,
    };
    c.bench_function("baseline training step (d=32, 256 tokens)", |bench| {
        bench.iter(|| {
            let ctx = StepCtx {
                adam: &mut adam,
                optim: &cfg.optim,
                lr: 1e-4,
                dropout: Some((cfg.model.dropout_rate, &mut rng)),
            };
            black_box(two_phase_step(Phase::A, &mut params, ctx, &model, &batch, None).unwrap())
        })
    });
}

fn corpus_bleu(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let data = synthetic_data(&cfg).unwrap();
    let refs: Vec<Vec<usize>> = data.test.iter().flat_map(|c| c.targets().map(<[usize]>::to_vec)).collect();
    let hyps: Vec<Vec<usize>> = refs.iter().map(|r| r.iter().rev().copied().collect()).collect();
    c.bench_function("corpus bleu (800 sentences)", |bench| bench.iter(|| black_box(bleu(&hyps, &refs).unwrap())));
}

criterion_group!(benches, matmul, training_step, corpus_bleu);
criterion_main!(benches);

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use posecast_bench::{random_tensor, random_walk};
use posecast_core::autodiff::Tape;
use posecast_core::encodings::{sl_dtw, soft_dtw};
use posecast_core::model::{ForwardOptions, Model, ModelConfig};
use posecast_core::motion::{synth_scene, SynthConfig};
use posecast_core::training::{rec_loss, Sample};

fn dtw(c: &mut Criterion) {
    let a = random_walk(50, 1);
    let b = random_walk(50, 2);
    c.bench_function("soft_dtw 50x50", |bench| {
        bench.iter(|| soft_dtw(black_box(&a), black_box(&b), 0.0).unwrap())
    });
    c.bench_function("sl_dtw 50 frames window 10", |bench| {
        bench.iter(|| sl_dtw(black_box(&a), black_box(&b), 10, 1, 0.0).unwrap())
    });
}

fn attention(c: &mut Criterion) {
    let (m, d) = (615, 16);
    let q = random_tensor(m, d, 1);
    let k = random_tensor(m, d, 2);
    let v = random_tensor(m, d, 3);
    let table = random_tensor(10, d, 4);
    let index: Arc<Vec<u16>> = Arc::new((0..m * m).map(|i| (i % 10) as u16).collect());
    c.bench_function("attention head 615 tokens fwd+bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (q, k, v) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
            let t = tape.leaf(table.clone());
            let out = tape
                .attention_head(q, k, v, Some((t, index.clone())), None, 0.25)
                .unwrap();
            let loss = tape.sum(out);
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn model_step(c: &mut Criterion) {
    let cfg = ModelConfig {
        d_ff: 256,
        ..ModelConfig::toy(64, 4, 3, 25)
    };
    let model = Model::new(cfg, 1).unwrap();
    let scene = synth_scene(&SynthConfig::default(), 3).unwrap();
    let sample = Sample::from_scene(&scene, 51, 25).unwrap();
    let prep = model.prepare(&sample.observed).unwrap();
    let mut group = c.benchmark_group("toy model");
    group.sample_size(10);
    group.bench_function("forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            black_box(model.forward(&mut tape, &prep, ForwardOptions::default()).unwrap());
        })
    });
    group.bench_function("forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &prep, ForwardOptions::default()).unwrap();
            let loss = rec_loss(&mut tape, out.displacements, &sample.target).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
    group.finish();
}

criterion_group!(benches, dtw, attention, model_step);
criterion_main!(benches);

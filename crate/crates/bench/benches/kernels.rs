use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use loadcast::model::{predict_day, self_attention, stage1_forward, stage1_input, ForwardCtx, LoadModel, ModelConfig, STAGE1};
use loadcast::tensor::{adam_step, AdamConfig, AdamState, Graph};
use loadcast::training::loss_graph;
use loadcast_bench::{random_tensor, synthetic_split};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for (name, cin, cout, h, w, stride) in [("9x24_1to16", 1, 16, 9, 24, 1), ("9x24_16to32_s2", 16, 32, 9, 24, 2), ("5x12_64to64", 64, 64, 5, 12, 1)] {
        let x = random_tensor(&[8, cin, h, w], 1);
        let k = random_tensor(&[cout, cin, 3, 3], 2);
        group.bench_function(format!("{name}_fwd_bwd"), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.param(x.clone());
                let kv = g.param(k.clone());
                let y = g.conv2d(xv, kv, stride).unwrap();
                let l = g.sum(y).unwrap();
                g.backward(l).unwrap();
                black_box(g.grad(kv).map(|t| t.len()))
            })
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("self_attention");
    for d in [8usize, 64] {
        let dh = d / 2;
        let x = random_tensor(&[d, 60], 3);
        let w: Vec<_> = (0..3).map(|i| random_tensor(&[dh, d], 10 + i)).collect();
        group.bench_function(format!("d{d}_60_tokens"), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let [q, k, v] = [0, 1, 2].map(|i| g.constant(w[i].clone()));
                black_box(self_attention(&mut g, xv, q, k, v).unwrap().output)
            })
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let split = synthetic_split(60, 5);
    let mut group = c.benchmark_group("predict_day");
    for (name, cfg) in [("tiny", ModelConfig::tiny()), ("default", ModelConfig::default())] {
        let model = LoadModel::new(cfg, 1).unwrap();
        let feats = &split.test[0].features;
        group.bench_function(name, |b| b.iter(|| black_box(predict_day(&model, feats, &split.stats).unwrap())));
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let split = synthetic_split(60, 6);
    let batch: Vec<_> = split.train.iter().take(32).collect();
    let feats: Vec<_> = batch.iter().map(|s| &s.features).collect();
    let input = stage1_input(&feats).unwrap();
    let target = loadcast::tensor::Tensor::from_fn(vec![24, batch.len()], |i| batch[i % batch.len()].target[i / batch.len()]);
    let mut group = c.benchmark_group("stage1_train_step");
    group.sample_size(20);
    for (name, cfg) in [("tiny_b32", ModelConfig::tiny()), ("default_b32", ModelConfig::default())] {
        let model = LoadModel::new(cfg, 2).unwrap();
        group.bench_function(name, |b| {
            b.iter_batched(
                || (model.clone(), AdamState::new(AdamConfig::default(), 1e-3)),
                |(mut m, mut adam)| {
                    let mut g = Graph::new();
                    let p = m.params.bind(&mut g, STAGE1, true);
                    let x = g.constant(input.clone());
                    let mut ctx = ForwardCtx::train(0.0, 0);
                    let y = stage1_forward(&mut g, &m.config, &m.params, &p, x, &mut ctx).unwrap();
                    let l = loss_graph(&mut g, y, &target).unwrap();
                    g.backward(l).unwrap();
                    let grads = p.gradients(&g);
                    adam_step(&mut m.params, &grads, &mut adam).unwrap();
                    m
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, conv, attention, predict, train_step);
criterion_main!(benches);

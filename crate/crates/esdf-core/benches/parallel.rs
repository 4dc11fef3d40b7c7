//! Data-parallel vs sequential throughput on the two hot loops: log
//! generation and censored-objective batch gradients.
//!
//! Build with default features so the `Auto` mode actually runs on the
//! thread pool: `cargo bench -p esdf-core`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use esdf_core::attribution::{snapshot, LabelPolicy};
use esdf_core::event::SlotConfig;
use esdf_core::objectives::{self, ObjectiveKind};
use esdf_core::par::Exec;
use esdf_core::synth::{generate_with, GenConfig};
use esdf_core::trainer::{init_params, TrainConfig, TrainObjective};

fn bench_generate(c: &mut Criterion) {
    let cfg = GenConfig::sampled(20_000, 1_200, 8, SlotConfig::default(), 7, 0.8).unwrap();
    let mut group = c.benchmark_group("generate_20k");
    group.sample_size(10);
    for (name, exec) in [("parallel", Exec::Auto), ("sequential", Exec::Sequential)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate_with(&cfg, exec, 256).unwrap());
        });
    }
    group.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let gen = GenConfig::sampled(4_096, 1_200, 8, SlotConfig::default(), 7, 0.8).unwrap();
    let (log, _) = generate_with(&gen, Exec::Auto, 256).unwrap();
    let snap = snapshot(&log, 7 * 86_400, LabelPolicy::FullCensored, &gen.slot).unwrap();
    let train_cfg = TrainConfig {
        emb_dim: 8,
        hidden: vec![32, 16],
        ..TrainConfig::new(TrainObjective::Esdf, 1, 7)
    };
    let params = init_params(&train_cfg, &log, gen.slot.num_bins()).unwrap();
    let heads = objectives::e_step_heads(&params, &log, &snap.samples).unwrap();
    let weights = objectives::e_step(&heads, &snap.samples).unwrap();

    let mut group = c.benchmark_group("esdf_gradient_4k");
    group.sample_size(10);
    for (name, exec) in [("parallel", Exec::Auto), ("sequential", Exec::Sequential)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                objectives::batch_gradient_with(
                    &params,
                    &log,
                    &snap.samples,
                    Some(&weights),
                    ObjectiveKind::Esdf,
                    exec,
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generate, bench_gradient);
criterion_main!(benches);

//! Throughput of the hot paths: convolution, plant sweeps and one training
//! step on the desk-scale acoustic plant.

use analog_bptt::gradients::{evaluate_gradients, PipelineOptions};
use analog_bptt::models::{make_acoustic_system, make_tube_kernel};
use analog_bptt::signal::{adjoint_convolve, convolve};
use analog_bptt::system::{backward, forward};
use analog_bptt::tasks::Task;
use analog_bptt::training::{init_masks, CostKind, TrainConfig};
use analog_bptt::{seeded_rng, Kernel, PhysicalSystem, Signal, TubeParams};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, RngCore};
use std::hint::black_box;

fn random_signal(rng: &mut impl Rng, channels: usize, n: usize) -> Signal {
    Signal::new(
        channels,
        1.0,
        (0..channels * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn desk_plant() -> PhysicalSystem {
    let tube = TubeParams {
        length_m: 0.8575,
        kernel_len: 600,
        ..TubeParams::default()
    };
    let kernel = make_tube_kernel(&tube).unwrap().retimed(1.0).unwrap();
    make_acoustic_system(&kernel, 200).unwrap().system
}

fn bench_convolution(c: &mut Criterion) {
    let mut rng = seeded_rng(0);
    let mut group = c.benchmark_group("convolve");
    for len in [16usize, 128, 600] {
        let taps = (0..len * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Kernel::new(2, 2, 1.0, taps).unwrap();
        let x = random_signal(&mut rng, 2, 4000);
        group.bench_with_input(BenchmarkId::new("causal", len), &len, |b, _| {
            b.iter(|| convolve(black_box(&w), black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("adjoint", len), &len, |b, _| {
            b.iter(|| adjoint_convolve(black_box(&w), black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn bench_plant(c: &mut Criterion) {
    let sys = desk_plant();
    let mut rng = seeded_rng(1);
    let s = random_signal(&mut rng, 1, 4000);
    let fwd = forward(&sys, &s, None).unwrap();
    let e_o = random_signal(&mut rng, 1, 4000);
    c.bench_function("acoustic forward 4000 samples", |b| {
        b.iter(|| forward(black_box(&sys), black_box(&s), None).unwrap())
    });
    c.bench_function("acoustic backward 4000 samples", |b| {
        b.iter(|| backward(black_box(&sys), &fwd, black_box(&e_o), None).unwrap())
    });
}

fn bench_training_step(c: &mut Criterion) {
    let sys = desk_plant();
    let task = Task::VariableDelay { one_hot: false };
    let mut rng = seeded_rng(2);
    let masks = init_masks(&sys, &task, 200, &TrainConfig::default(), &mut rng as &mut dyn RngCore).unwrap();
    let batch = task.generate(20, &mut rng as &mut dyn RngCore).unwrap();
    let opts = PipelineOptions {
        skip_kernels: true,
        ..PipelineOptions::default()
    };
    c.bench_function("mask gradient, 20 instances x 200 samples", |b| {
        b.iter(|| evaluate_gradients(&sys, &masks, black_box(&batch), CostKind::Mse, None, opts).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_convolution, bench_plant, bench_training_step
}
criterion_main!(benches);

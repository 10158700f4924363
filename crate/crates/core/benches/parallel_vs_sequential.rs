//! Parallel vs sequential execution of the data-parallel hot paths.
//!
//! Run with `cargo bench -p wipu-core`. Both modes produce bitwise identical
//! results; only wall time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wipu_core::data::synthetic::synthetic_image;
use wipu_core::data::{ImageSet, ImageSource, Rng};
use wipu_core::engine::{Tape, Tensor};
use wipu_core::metrics::{evaluate, EvalConfig};
use wipu_core::models::{build, Arch, ModelSpec};
use wipu_core::par;

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn conv_forward_backward(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let x = Tensor::from_fn([16, 16, 32, 32], |_| rng.uniform_f32());
    let w = Tensor::from_fn([16, 16, 3, 3], |_| rng.uniform_f32() - 0.5);
    let b = Tensor::zeros([1, 1, 1, 16]);
    let mut group = c.benchmark_group("conv3x3_16ch_32px_batch16");
    for (name, sequential) in MODES {
        par::set_sequential(sequential);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (xv, wv, bv) = (tape.param(x.clone()), tape.param(w.clone()), tape.param(b.clone()));
                let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
                let l = tape.mse(y, xv).unwrap();
                tape.backward(l).unwrap();
                black_box(tape.take_grad(wv))
            })
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn evaluate_model(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let images = (0..32).map(|_| synthetic_image(&mut rng, 32, 32)).collect();
    let set = ImageSet::new(images, (0..32).map(|i| i.to_string()).collect(), ImageSource::Folder).unwrap();
    let model = build(&ModelSpec::new(Arch::Wipunet, 16)).unwrap();
    let mut group = c.benchmark_group("evaluate_wipunet_w16_32imgs");
    group.sample_size(10);
    for (name, sequential) in MODES {
        par::set_sequential(sequential);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(evaluate(&model, &set, 25.0, &EvalConfig::default()).unwrap()))
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, conv_forward_backward, evaluate_model);
criterion_main!(benches);

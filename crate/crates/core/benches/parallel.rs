//! Sequential vs rayon execution of the data-parallel paths: batch image
//! loading with augmentation, a convolution forward/backward and a full
//! CustomNet training step.

use std::hint::black_box;

use chestxr::data::{load_batch, make_synthetic_fixture, AugmentationConfig, FixtureConfig};
use chestxr::exec::{set_execution, Execution};
use chestxr::nn::{Conv2d, Layer, Mode, ParamBuilder};
use chestxr::zoo::build_custom_net;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::{Array2, Array4};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn batch_loading(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let fc = FixtureConfig {
        image_size: 128,
        ..FixtureConfig::new(64, 32, 1)
    };
    let m = make_synthetic_fixture(&fc, dir.path()).unwrap();
    let aug = AugmentationConfig {
        resize_hw: (128, 128),
        ..Default::default()
    };
    let indices: Vec<usize> = (0..m.len()).collect();
    let mut g = c.benchmark_group("load_batch_64x128px");
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                load_batch(
                    dir.path(),
                    &m.records,
                    black_box(&indices),
                    &aug,
                    Some((0, 1)),
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let b = ParamBuilder::new(0);
    let mut layer = Conv2d::square(&b, 32, 64, 3, 1, 1, true);
    let x = Array4::from_shape_fn((16, 32, 32, 32), |(n, c, h, w)| {
        ((n + 3 * c + 5 * h + 7 * w) % 13) as f32 / 13.0
    });
    let mut g = c.benchmark_group("conv3x3_32to64_16x32x32");
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| {
                let y = layer.forward(black_box(&x), Mode::Train).unwrap();
                layer.backward(&y).unwrap()
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let mut model = build_custom_net(0);
    let x = Array4::from_shape_fn((16, 3, 64, 64), |(n, c, h, w)| {
        ((n + c + 3 * h + w) % 17) as f32 / 17.0 - 0.5
    });
    let grad = Array2::from_elem((16, 14), 0.01f32);
    let mut g = c.benchmark_group("customnet_step_16x64px");
    g.sample_size(20);
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                model.zero_grad();
                model.forward_logits(black_box(&x), Mode::Train).unwrap();
                model.backward_logits(&grad).unwrap();
            })
        });
    }
    g.finish();
}

criterion_group!(benches, batch_loading, conv, train_step);
criterion_main!(benches);

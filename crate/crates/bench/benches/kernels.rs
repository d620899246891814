//! Hot kernels: divergences, the decomposition, network evaluation,
//! Lipschitz certificates and the bound formulas.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lawrob_core::bounds::{failure_probability, robustness_lower_bound};
use lawrob_core::decomposition::{decompose, mean_grad_f};
use lawrob_core::function_class::{lipschitz_lower_bound, lipschitz_upper_bound};
use lawrob_core::rng::{self, stream_id, tags};
use lawrob_core::sampler::MeanMap;
use lawrob_core::{BoundInputs, DataModel, FunctionClass, Head, LabelLaw, LossSpec};

fn regression(d: usize) -> (LossSpec, DataModel) {
    let loss = LossSpec::square(1, 1.0).unwrap();
    let model = DataModel::new(
        d,
        vec![1.0],
        vec![vec![0.0; d]],
        LabelLaw::Regression {
            k: 1,
            map: MeanMap::Tanh,
            gain: 1.0,
            noise_scale: 0.5,
            m: 1.0,
        },
        1,
    )
    .unwrap();
    (loss, model)
}

fn divergence(c: &mut Criterion) {
    let mut g = c.benchmark_group("divergence");
    for k in [2usize, 10, 100] {
        let sq = LossSpec::square(k, 1.0).unwrap();
        let ce = LossSpec::neg_entropy(k, 1.0, 0.5 / k as f64).unwrap();
        let a: Vec<f64> = (0..k).map(|i| (i as f64 + 1.0) / (k * (k + 1) / 2) as f64).collect();
        let b = vec![1.0 / k as f64; k];
        g.bench_with_input(BenchmarkId::new("square", k), &k, |bch, _| {
            bch.iter(|| sq.divergence(black_box(&a), black_box(&b)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("neg_entropy", k), &k, |bch, _| {
            bch.iter(|| ce.divergence(black_box(&a), black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn decomposition(c: &mut Criterion) {
    let (loss, model) = regression(16);
    let f = |x: &[f64]| vec![x[0].tanh() * 0.5];
    let grads = mean_grad_f(&loss, &model, f, 2000, stream_id(tags::GRAD_MEAN, 0), false).unwrap();
    let samples = model.sample_batch(256, stream_id(tags::SAMPLES, 0));
    c.bench_function("decompose_256", |b| {
        b.iter(|| {
            samples
                .iter()
                .map(|s| decompose(&loss, &model, f, s, 1.0 / 12.0, &grads.overall).unwrap().z)
                .sum::<f64>()
        })
    });
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("network");
    for width in [64usize, 256] {
        let class = FunctionClass::new(vec![64, width, 1], vec![1.0], Head::Clip { m: 1.0, smooth: false }, 4.0).unwrap();
        let net = class.realize(&class.init_params(&mut rng::stream(1, 0))).unwrap();
        let x = class.random_input(&mut rng::stream(1, 1));
        let anchors: Vec<Vec<f64>> = (0..32).map(|i| class.random_input(&mut rng::stream(2, i))).collect();
        g.bench_with_input(BenchmarkId::new("eval", width), &width, |b, _| b.iter(|| net.eval(black_box(&x))));
        g.bench_with_input(BenchmarkId::new("jacobian", width), &width, |b, _| {
            b.iter(|| net.jacobian(black_box(&x)))
        });
        g.bench_with_input(BenchmarkId::new("lipschitz_upper", width), &width, |b, _| {
            b.iter(|| lipschitz_upper_bound(&net).value)
        });
        g.bench_with_input(BenchmarkId::new("lipschitz_lower_100", width), &width, |b, _| {
            b.iter(|| lipschitz_lower_bound(&net, &anchors, 100, &mut rng::stream(3, 0)).unwrap())
        });
    }
    g.finish();
}

fn bounds(c: &mut Criterion) {
    let inp = BoundInputs {
        constants: LossSpec::square(1, 1.0).unwrap().constants().unwrap(),
        n: 256,
        d: 64,
        p: 16897,
        r: 1,
        eps: 0.02,
        delta: 0.1,
        c: 1.0,
        big_c: 2.0,
        j: 660.0,
        w: 260.0,
        lipschitz: Some(1.0),
    };
    c.bench_function("robustness_lower_bound", |b| {
        b.iter(|| robustness_lower_bound(black_box(&inp)).unwrap().value)
    });
    c.bench_function("failure_probability", |b| {
        b.iter(|| failure_probability(black_box(&inp)).unwrap().delta_total)
    });
}

criterion_group!(benches, divergence, decomposition, network, bounds);
criterion_main!(benches);

use lawrob_core::concentration::mean_stderr;
use lawrob_core::sampler::{Encoding, LabelLaw, MeanMap, MeansSpec, ProbMap};
use lawrob_core::{DataModel, LossSpec};

fn regression(d: usize, weights: Vec<f64>, noise: f64, map: MeanMap, seed: u64) -> DataModel {
    let r = weights.len();
    DataModel::new(
        d,
        weights,
        MeansSpec::Spread(2.0).materialize(d, r).unwrap(),
        LabelLaw::Regression {
            k: 2,
            map,
            gain: 1.0,
            noise_scale: noise,
            m: 1.0,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn batches_are_reproducible_per_seed_and_stream() {
    let m = regression(5, vec![0.5, 0.5], 0.2, MeanMap::Tanh, 7);
    let a = m.sample_batch(100, 3);
    assert_eq!(a, m.sample_batch(100, 3));
    assert_ne!(a, m.sample_batch(100, 4));
    assert_ne!(a, m.clone().with_seed(8).sample_batch(100, 3));
    let bits = |s: &[lawrob_core::Sample]| -> Vec<u64> {
        s.iter().flat_map(|x| x.x.iter().chain(&x.y)).map(|v| v.to_bits()).collect()
    };
    assert_eq!(bits(&a), bits(&m.sample_batch(100, 3)));
}

#[test]
fn component_frequencies_match_weights() {
    let weights = vec![0.2, 0.5, 0.3];
    let m = regression(4, weights.clone(), 0.1, MeanMap::Zero, 1);
    let n = 20_000;
    let s = m.sample_batch(n, 0);
    for (g, w) in weights.iter().enumerate() {
        let freq = s.iter().filter(|x| x.g == g).count() as f64 / n as f64;
        let se = (w * (1.0 - w) / n as f64).sqrt();
        assert!((freq - w).abs() <= 5.0 * se, "component {g}: {freq} vs {w}");
    }
}

#[test]
fn components_are_isotropic_with_variance_one_over_d() {
    let d = 8;
    let m = regression(d, vec![0.5, 0.5], 0.1, MeanMap::Zero, 2);
    let n = 20_000;
    let mut rng = m.rng(9);
    for g in 0..2 {
        let xs = m.sample_component(g, n, &mut rng);
        for i in 0..d {
            let col: Vec<f64> = xs.iter().map(|x| x[i] - m.means()[g][i]).collect();
            let (mean, se) = mean_stderr(&col);
            assert!(mean.abs() <= 5.0 * se);
            let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            // the variance of a chi-square(1)/d average has relative sd sqrt(2/n)
            assert!((var * d as f64 - 1.0).abs() <= 5.0 * (2.0 / n as f64).sqrt(), "var {var}");
            for j in 0..i {
                let cov = xs
                    .iter()
                    .map(|x| (x[i] - m.means()[g][i]) * (x[j] - m.means()[g][j]))
                    .sum::<f64>()
                    / n as f64;
                assert!(cov.abs() * d as f64 <= 5.0 / (n as f64).sqrt());
            }
        }
    }
}

#[test]
fn regression_noise_is_uniform_around_the_mean() {
    let s = 0.3;
    let m = regression(3, vec![1.0], s, MeanMap::Tanh, 3);
    let samples = m.sample_batch(20_000, 0);
    let resid: Vec<f64> = samples
        .iter()
        .flat_map(|x| {
            let mu = m.conditional_mean(&x.x);
            x.y.iter().zip(mu).map(|(y, mu)| y - mu).collect::<Vec<_>>()
        })
        .collect();
    assert!(resid.iter().all(|v| v.abs() <= s));
    assert!(samples.iter().all(|x| x.y.iter().all(|v| v.abs() <= 1.0)));
    let (mean, se) = mean_stderr(&resid);
    assert!(mean.abs() <= 5.0 * se);
    let var = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
    assert!((var - s * s / 3.0).abs() <= 0.02 * s * s / 3.0);
}

#[test]
fn class_labels_follow_constant_probabilities() {
    let q = vec![0.1, 0.6, 0.3];
    let m = DataModel::new(
        2,
        vec![1.0],
        vec![vec![0.0; 2]],
        LabelLaw::Classification {
            classes: 3,
            probs: ProbMap::Constant(q.clone()),
            alpha: 0.1,
            encoding: Encoding::OneHot,
        },
        4,
    )
    .unwrap();
    let n = 20_000;
    let s = m.sample_batch(n, 0);
    for (l, ql) in q.iter().enumerate() {
        let freq = s.iter().filter(|x| x.y[l] == 1.0).count() as f64 / n as f64;
        assert!((freq - ql).abs() <= 5.0 * (ql * (1.0 - ql) / n as f64).sqrt());
    }
    assert!(s.iter().all(|x| x.y.iter().sum::<f64>() == 1.0));
    let loss = LossSpec::neg_entropy(3, 1.0, 0.1).unwrap();
    let floor = m.noise_floor(&loss, 1000, 0).unwrap();
    let entropy: f64 = q.iter().map(|p| -p * p.ln()).sum();
    assert!((floor.sigma2 - entropy).abs() < 1e-12);
    assert_eq!(floor.mc_stderr, 0.0);
}

#[test]
fn closed_form_noise_floors_for_regression() {
    let s = 0.4;
    let m = regression(3, vec![1.0], s, MeanMap::Zero, 5);
    let sq = m.noise_floor(&LossSpec::square(2, 1.0).unwrap(), 1000, 0).unwrap();
    assert!((sq.sigma2 - 2.0 * s * s / 3.0).abs() < 1e-12);
    let a = vec![2.0, 0.5, 0.5, 1.0];
    let mh = m
        .noise_floor(&LossSpec::mahalanobis(a, 2, 1.0).unwrap(), 1000, 0)
        .unwrap();
    assert!((mh.sigma2 - 3.0 * s * s / 3.0).abs() < 1e-12);
    // an x-dependent mean still has the same floor, now by Monte Carlo
    let m = regression(3, vec![1.0], s, MeanMap::Tanh, 5);
    let mc = m.noise_floor(&LossSpec::square(2, 1.0).unwrap(), 5000, 0).unwrap();
    assert!((mc.sigma2 - 2.0 * s * s / 3.0).abs() < 1e-12);
}

#[test]
fn isoperimetry_witness_on_linear_functional() {
    let d = 16;
    let m = regression(d, vec![1.0], 0.1, MeanMap::Zero, 6);
    let w = m.isoperimetry_witness(|x| x[0], 1.0, 20_000, 0).unwrap();
    assert!((w.bound - 0.25).abs() < 1e-15);
    assert!(w.subgaussian_hat <= 1.2 * w.bound, "{} vs {}", w.subgaussian_hat, w.bound);
    assert!(w.subgaussian_hat >= 0.8 * w.bound);
}

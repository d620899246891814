use lawrob_core::concentration::{hoeffding_bound, run_tail_check, subgaussian_estimate, TailCheckSetup};
use lawrob_core::decomposition::mean_grad_f;
use lawrob_core::error::Error;
use lawrob_core::rng;
use lawrob_core::sampler::{Encoding, ProbMap};
use lawrob_core::{DataModel, FunctionClass, Head, LabelLaw, LossSpec, StatementId};
use rand_distr::{Distribution, Normal};

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// `P(Binomial(n, p) = k)` for every `k`.
fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp())
        .collect()
}

fn biased_coin(p0: f64, seed: u64) -> (LossSpec, DataModel) {
    let loss = LossSpec::neg_entropy(2, 1.0, 0.1).unwrap();
    let model = DataModel::new(
        3,
        vec![1.0],
        vec![vec![0.0; 3]],
        LabelLaw::Classification {
            classes: 2,
            probs: ProbMap::Constant(vec![p0, 1.0 - p0]),
            alpha: 0.1,
            encoding: Encoding::OneHot,
        },
        seed,
    )
    .unwrap();
    (loss, model)
}

fn setup<'a>(loss: &'a LossSpec, model: &'a DataModel, sigma2: f64, n: usize, trials: usize) -> TailCheckSetup<'a> {
    TailCheckSetup {
        loss,
        constants: loss.constants().unwrap(),
        model,
        predictor: None,
        lipschitz: 0.0,
        grads: None,
        sigma2,
        n,
        trials,
        c_iso: 1.0,
        c_fact: 2.0,
        stream_base: 0,
    }
}

#[test]
fn obs33_frequency_matches_exact_binomial_tail() {
    // one-hot labels: Phi2 of a sample is -log mu_y - H(mu), so the mean is
    // a function of the class-0 count
    let (loss, model) = biased_coin(0.3, 4);
    let mu = model.conditional_mean(&[0.0; 3]);
    let h = -(mu[0] * mu[0].ln() + mu[1] * mu[1].ln());
    let n = 40usize;
    let trials = 20_000;
    let s = setup(&loss, &model, h, n, trials);
    let c = loss.constants().unwrap();
    let mults = [0.005, 0.01, 0.02];
    let reps = run_tail_check(&s, &[StatementId::Obs33], &mults).unwrap();
    let pmf = binomial_pmf(n as u64, mu[0]);
    for (r, m) in reps.iter().zip(mults) {
        let eps = m * c.big_m0;
        let exact: f64 = pmf
            .iter()
            .enumerate()
            .filter(|&(k, _)| {
                let k = k as f64;
                let mean = (-k * mu[0].ln() - (n as f64 - k) * mu[1].ln()) / n as f64 - h;
                mean <= -eps && mean < 0.0
            })
            .map(|(_, p)| p)
            .sum();
        let se = (exact * (1.0 - exact) / trials as f64).sqrt().max(1e-4);
        assert!((r.empirical_freq - exact).abs() <= 4.0 * se, "{r:?} exact {exact}");
        assert!(exact <= r.analytic_bound, "exact {exact} above bound {}", r.analytic_bound);
        assert!(r.pass);
    }
}

#[test]
fn azuma_walk_matches_exact_tail_and_bound() {
    let (loss, model) = biased_coin(0.5, 9);
    let n = 50usize;
    let trials = 20_000;
    let s = setup(&loss, &model, std::f64::consts::LN_2, n, trials);
    let mults = [0.1, 0.2, 0.3];
    let reps = run_tail_check(&s, &[StatementId::Azuma], &mults).unwrap();
    let pmf = binomial_pmf(n as u64, 0.5);
    for (r, eps) in reps.iter().zip(mults) {
        // walk = 2 * ups - n
        let exact: f64 = pmf
            .iter()
            .enumerate()
            .filter(|&(u, _)| (2.0 * u as f64 - n as f64) / n as f64 <= -eps)
            .map(|(_, p)| p)
            .sum();
        let se = (exact * (1.0 - exact) / trials as f64).sqrt().max(1e-4);
        assert!((r.empirical_freq - exact).abs() <= 4.0 * se, "{r:?} exact {exact}");
        let want = (-(n as f64) * eps * eps / 2.0).exp();
        assert!((r.analytic_bound - want).abs() <= 1e-15);
        assert!(exact <= want);
    }
}

#[test]
fn hoeffding_bound_hand_values() {
    assert_eq!(hoeffding_bound(10, 0.0, 1.0), 1.0);
    assert!((hoeffding_bound(200, 0.1, 1.0) - (-4.0f64).exp()).abs() < 1e-15);
    assert!((hoeffding_bound(50, 0.5, 2.0) - (-6.25f64).exp()).abs() < 1e-15);
}

#[test]
fn predictor_statements_are_dominated_and_thread_independent() {
    let loss = LossSpec::neg_entropy(3, 1.5, 0.05).unwrap();
    let model = DataModel::new(
        6,
        vec![1.0],
        vec![vec![0.0; 6]],
        LabelLaw::Classification {
            classes: 3,
            probs: ProbMap::Constant(vec![0.2, 0.3, 0.5]),
            alpha: 0.05,
            encoding: Encoding::OneHot,
        },
        21,
    )
    .unwrap();
    let class = FunctionClass::new(vec![6, 8, 3], vec![0.5], Head::Softmax { m: 1.5 }, 4.0).unwrap();
    let net = class.realize(&class.random_params(&mut rng::stream(21, 1))).unwrap();
    let f = |x: &[f64]| net.eval(x);
    let grads = mean_grad_f(&loss, &model, f, 4000, 3, true).unwrap();
    let mut s = setup(&loss, &model, 0.0, 100, 1500);
    s.sigma2 = model.noise_floor(&loss, 20_000, 2).unwrap().sigma2;
    s.predictor = Some(&f);
    s.grads = Some(grads);
    s.lipschitz = lawrob_core::function_class::lipschitz_upper_bound(&net).value;
    let ids = [StatementId::Obs34, StatementId::Lem36, StatementId::Lem51_vhat];
    let a = run_tail_check(&s, &ids, &[0.05, 0.1, 0.4]).unwrap();
    assert_eq!(a.len(), 9);
    for r in &a {
        assert!(r.pass, "{r:?}");
        assert_eq!(r.vacuous, r.analytic_bound >= 1.0);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let b = pool.install(|| run_tail_check(&s, &ids, &[0.05, 0.1, 0.4]).unwrap());
    assert_eq!(a, b);
}

#[test]
fn mixture_statements_need_more_than_one_component() {
    let (loss, model) = biased_coin(0.4, 1);
    let s = setup(&loss, &model, 0.5, 10, 10);
    assert!(matches!(
        run_tail_check(&s, &[StatementId::Lem52_vtilde], &[0.1]),
        Err(Error::ConfigInfeasible(_))
    ));
    // Lem36 is a single-component statement
    let mixture = DataModel::new(
        3,
        vec![0.5, 0.5],
        vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]],
        model.label_law().clone(),
        1,
    )
    .unwrap();
    let f = |_: &[f64]| vec![0.5, 0.5];
    let mut s = setup(&loss, &mixture, 0.5, 10, 10);
    s.predictor = Some(&f);
    s.grads = Some(mean_grad_f(&loss, &mixture, f, 1000, 0, true).unwrap());
    assert!(matches!(
        run_tail_check(&s, &[StatementId::Lem36], &[0.1]),
        Err(Error::MixtureNotSupported(2))
    ));
}

#[test]
fn subgaussian_estimate_recovers_gaussian_scale() {
    let mut r = rng::stream(8, 0);
    let normal = Normal::new(0.0, 1.7).unwrap();
    let xs: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut r)).collect();
    let est = subgaussian_estimate(&xs).unwrap();
    assert!((est.sigma_hat / 1.7 - 1.0).abs() < 0.1, "{est:?}");
    assert_eq!(subgaussian_estimate(&[3.0; 1000]).unwrap().sigma_hat, 0.0);
    assert!(subgaussian_estimate(&[1.0, 2.0]).is_err());
}

use lawrob_core::function_class::{
    build_grid_net, epsilon_net_size, lipschitz_lower_bound, lipschitz_upper_bound, net_perturbation_bound,
    parameterization_lipschitz_estimate,
};
use lawrob_core::rng::{self, StreamRng};
use lawrob_core::{loss_constants, FunctionClass, Head, LossKind, LossSpec};
use num_bigint::BigUint;
use rand::Rng;

fn heads() -> Vec<(Head, usize)> {
    vec![
        (Head::Clip { m: 1.0, smooth: false }, 2),
        (Head::Clip { m: 1.0, smooth: true }, 2),
        (Head::Softmax { m: 1.5 }, 3),
        (Head::Sigmoid { m: 2.0 }, 1),
    ]
}

#[test]
fn lipschitz_sandwich_on_random_networks() {
    let mut r = rng::stream(31, 0);
    for (head, k) in heads() {
        for width in [4, 16] {
            let c = FunctionClass::new(vec![5, width, width, k], vec![0.8], head, 2.0).unwrap();
            for _ in 0..5 {
                let net = c.realize(&c.random_params(&mut r)).unwrap();
                let ub = lipschitz_upper_bound(&net);
                let lb = lipschitz_lower_bound(&net, &[], 200, &mut r).unwrap();
                assert!(lb <= ub.value, "{head:?}: lb {lb} > ub {}", ub.value);
                assert!(lb > 0.0);
            }
        }
    }
}

#[test]
fn sampled_parameter_constant_stays_below_certificate() {
    let mut r = rng::stream(32, 0);
    for (head, k) in heads() {
        let c = FunctionClass::new(vec![4, 8, k], vec![0.5, 1.0], head, 1.5).unwrap();
        let est = parameterization_lipschitz_estimate(&c, 400, &mut r).unwrap();
        assert!(est <= c.j_cert(), "{head:?}: {est} > {}", c.j_cert());
        assert!(est > 0.0);
    }
}

#[test]
fn softmax_outputs_respect_floor() {
    let mut r = rng::stream(33, 0);
    for (m, k) in [(0.5, 2), (1.0, 4), (3.0, 5)] {
        let c = FunctionClass::new(vec![3, 6, k], vec![10.0], Head::Softmax { m }, 5.0).unwrap();
        let floor = (-2.0 * m).exp() / k as f64;
        for _ in 0..200 {
            let net = c.realize(&c.random_params(&mut r)).unwrap();
            let y = net.eval(&c.random_input(&mut r));
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(y.iter().all(|&v| v >= floor * (1.0 - 1e-12)), "{y:?} below {floor}");
        }
    }
}

fn random_label(loss: &LossSpec, r: &mut StreamRng) -> Vec<f64> {
    let m = loss.params.m;
    match loss.kind {
        LossKind::NegEntropy => {
            let a = loss.params.alpha;
            let mut q: Vec<f64> = (0..loss.k).map(|_| r.random::<f64>()).collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v = a + (1.0 - a * loss.k as f64) * *v / s);
            q
        }
        LossKind::BinaryEntropy => vec![r.random_range(0.0..=1.0)],
        _ => (0..loss.k).map(|_| r.random_range(-m..=m)).collect(),
    }
}

#[test]
fn perturbation_bound_holds_for_nearby_networks() {
    let mut r = rng::stream(34, 0);
    let cases = [
        (LossSpec::square(2, 1.0).unwrap(), Head::Clip { m: 1.0, smooth: false }),
        (
            LossSpec::mahalanobis(vec![2.0, 0.5, 0.5, 1.0], 2, 1.0).unwrap(),
            Head::Clip { m: 1.0, smooth: true },
        ),
        (LossSpec::neg_entropy(3, 1.0, 0.05).unwrap(), Head::Softmax { m: 1.0 }),
        (LossSpec::binary_entropy(1.5, 0.1).unwrap(), Head::Sigmoid { m: 1.5 }),
    ];
    for (loss, head) in cases {
        let consts = loss_constants(&loss).unwrap();
        let c = FunctionClass::new(vec![3, 8, loss.k], vec![1.0], head, 2.0).unwrap();
        for _ in 0..50 {
            let w1 = c.random_params(&mut r);
            let mut w2: Vec<f64> = w1.iter().map(|v| v + 0.01 * (r.random::<f64>() - 0.5)).collect();
            c.project(&mut w2);
            let (f, g) = (c.realize(&w1).unwrap(), c.realize(&w2).unwrap());
            let xs: Vec<Vec<f64>> = (0..20).map(|_| c.random_input(&mut r)).collect();
            let nu = f.sup_distance(&g, &xs);
            let bound = net_perturbation_bound(&consts, nu);
            for x in &xs {
                let y = random_label(&loss, &mut r);
                let gap = (loss.divergence(&y, &f.eval(x)).unwrap() - loss.divergence(&y, &g.eval(x)).unwrap()).abs();
                assert!(gap <= bound * (1.0 + 1e-9) + 1e-15, "{:?}: {gap} > {bound}", loss.kind);
            }
        }
    }
}

#[test]
fn grid_net_covers_parameter_box() {
    let c = FunctionClass::new(vec![2, 2, 1], vec![0.5], Head::Clip { m: 1.0, smooth: false }, 1.0).unwrap();
    let eps_prime = 1.2;
    let net = build_grid_net(&c, eps_prime, 1_000_000).unwrap();
    assert!(net.param_radius <= eps_prime);
    let bound = epsilon_net_size(c.diameter(), c.p(), eps_prime).unwrap();
    assert!(BigUint::from(net.count) <= bound.ceil().unwrap());
    let mut r = rng::stream(35, 0);
    assert_eq!(net.verify_cover(2000, &mut r), 1.0);
    for _ in 0..200 {
        let w = c.random_params(&mut r);
        let (center, dist) = net.nearest(&w);
        assert!(dist <= net.param_radius);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| c.random_input(&mut r)).collect();
        let gap = c.realize(&w).unwrap().sup_distance(&c.realize(&center).unwrap(), &xs);
        assert!(gap <= net.radius * (1.0 + 1e-12));
    }
}

#[test]
fn net_size_is_exact_for_rational_ratios() {
    let s = epsilon_net_size(1.0, 3, 0.5).unwrap();
    assert!(s.exact_integer);
    assert_eq!(s.count().unwrap(), &BigUint::from(125u32));
    let s = epsilon_net_size(1.0, 2, 0.75).unwrap();
    // (1 + 8/3)^2 = 121/9
    assert!(!s.exact_integer);
    assert_eq!(s.count().unwrap(), &BigUint::from(13u32));
    assert_eq!(s.ceil().unwrap(), BigUint::from(14u32));
    assert!((s.log_value - (121.0f64 / 9.0).ln()).abs() < 1e-12);
}

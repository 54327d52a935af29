use marblr_core::logistic::{fit_mle, grad_hessian, log_likelihood, posterior_predictive, LabeledBatch, PredictiveMethod};
use marblr_core::GaussianBelief;
use nalgebra::{dmatrix, dvector, DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng) -> (LabeledBatch<f64>, DVector<f64>) {
    let d = rng.random_range(1..=5);
    let n = rng.random_range(1..=20);
    let z = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
    let theta = DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
    (LabeledBatch::new(z, y).unwrap(), theta)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn derivatives_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for _ in 0..100 {
        let (b, theta) = random_instance(&mut rng);
        let (g, hess) = grad_hessian(&b, &theta).unwrap();
        for j in 0..theta.len() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (log_likelihood(&b, &up).unwrap() - log_likelihood(&b, &dn).unwrap()) / (2.0 * h);
            assert!(rel_err(g[j], fd) < 1e-5, "grad {j}: {} vs {fd}", g[j]);
            let (gu, _) = grad_hessian(&b, &up).unwrap();
            let (gd, _) = grad_hessian(&b, &dn).unwrap();
            for k in 0..theta.len() {
                let fd2 = (gu[k] - gd[k]) / (2.0 * h);
                assert!(rel_err(hess[(k, j)], fd2) < 1e-5, "hess ({k},{j}): {} vs {fd2}", hess[(k, j)]);
            }
        }
    }
}

proptest! {
    #[test]
    fn hessian_is_negative_semidefinite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, theta) = random_instance(&mut rng);
        let (_, hess) = grad_hessian(&b, &theta).unwrap();
        let top = SymmetricEigen::new(hess).eigenvalues.max();
        prop_assert!(top <= 1e-10);
    }

    #[test]
    fn per_observation_curvature_at_most_quarter(eta in -30.0f64..30.0) {
        let b = LabeledBatch::new(dmatrix![1.0], vec![1]).unwrap();
        let (_, hess) = grad_hessian(&b, &dvector![eta]).unwrap();
        prop_assert!(-hess[(0, 0)] <= 0.25 + 1e-15);
    }
}

/// `∫ σ(m + s x) φ(x) dx` by the trapezoid rule on `[−10, 10]`.
fn quadrature_predictive(m: f64, s: f64) -> f64 {
    let k = 200_000;
    let h = 20.0 / k as f64;
    let mut acc = 0.0;
    for i in 0..=k {
        let x = -10.0 + i as f64 * h;
        let w = if i == 0 || i == k { 0.5 } else { 1.0 };
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        acc += w * phi / (1.0 + (-(m + s * x)).exp());
    }
    acc * h
}

#[test]
fn predictive_against_quadrature() {
    let belief = GaussianBelief::<f64>::new(dvector![1.0], dmatrix![1.0]).unwrap();
    let z = dvector![1.0];
    let exact = quadrature_predictive(1.0, 1.0);
    let probit = posterior_predictive(&belief, &z, PredictiveMethod::ProbitApprox).unwrap();
    let mc = posterior_predictive(&belief, &z, PredictiveMethod::MonteCarlo { samples: 1_000_000, seed: 5 }).unwrap();
    assert!((probit - 0.700).abs() < 5e-4, "{probit}");
    assert!((mc - probit).abs() < 0.005, "{mc} vs {probit}");
    assert!((mc - exact).abs() < 0.003, "{mc} vs {exact}");
    let again = posterior_predictive(&belief, &z, PredictiveMethod::MonteCarlo { samples: 1_000_000, seed: 5 }).unwrap();
    assert_eq!(mc, again);
}

#[test]
fn fit_mle_is_stationary_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: DVector<f64> = dvector![-0.5, 1.0, 0.3];
    let batches: Vec<_> = (0..5)
        .map(|_| {
            let z = DMatrix::from_fn(40, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
            let eta = &z * &truth;
            let y = eta.iter().map(|&e| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-e).exp()))).collect();
            LabeledBatch::new(z, y).unwrap()
        })
        .collect();
    let fit = fit_mle(&batches, &DVector::zeros(3), 0.0).unwrap();
    assert!(fit.converged);
    let mut g = DVector::zeros(3);
    for b in &batches {
        g += grad_hessian(b, &fit.theta).unwrap().0;
    }
    assert!(g.amax() < 1e-8);
}

mod common;

use common::{logistic_stream, sigmoid};
use marblr_core::metrics::{
    auc, compute_r, eci, fit_oracles, log_prior_shift_times, type1_bound_marblr, type2_bound_blr, type2_bound_marblr,
    type2_regret, BoundInputs, EciMethod, ShiftTimes, TauPrimeSearch,
};
use marblr_core::{grad_hessian, run, LabeledBatch, MarBlrConfig};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
fn brute_auc(p: &[f64], y: &[u8]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                good += if p[i] > p[j] {
                    1.0
                } else if p[i] == p[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    good / pairs
}

fn labelled(seed: u64, n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Coarse grid so ties are common.
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 20.0).collect();
    let mut y: Vec<u8> = p.iter().map(|&q| u8::from(rng.random::<f64>() < q)).collect();
    y[0] = 0;
    y[1] = 1;
    (p, y)
}

#[test]
fn auc_fixed_example() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
}

#[test]
fn auc_matches_pair_count() {
    for seed in 0..20 {
        let (p, y) = labelled(seed, 60);
        assert!((auc(&p, &y).unwrap() - brute_auc(&p, &y)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn eci_ignores_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let (p, y) = labelled(seed, 80);
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let y2: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        for m in [EciMethod::Binned(10), EciMethod::LogitSmooth] {
            let a = eci(&p, &y, m).unwrap().value;
            let b = eci(&p2, &y2, m).unwrap().value;
            // The smoothed fit stops at a gradient tolerance, so summation order shows.
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{:?} {} {}", m, a, b);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_maps(seed in any::<u64>()) {
        let (p, y) = labelled(seed, 50);
        let q: Vec<f64> = p.iter().map(|&v| v * v * v).collect();
        prop_assert!((auc(&p, &y).unwrap() - auc(&q, &y).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn self_consistent_probabilities_have_small_eci() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p: Vec<f64> = (0..100_000).map(|_| sigmoid(rng.random_range(-3.0..3.0))).collect();
    let y: Vec<u8> = p.iter().map(|&q| u8::from(rng.random::<f64>() < q)).collect();
    // Ten bins leave a within-bin spread term of about 0.08 here however
    // large n is, so the binned check uses twenty.
    for m in [EciMethod::Binned(20), EciMethod::LogitSmooth] {
        let v = eci(&p, &y, m).unwrap().value;
        assert!(v < 0.05, "{m:?}: {v}");
    }
    assert!(eci(&p, &y, EciMethod::Binned(10)).unwrap().value > 0.05);
}

#[test]
fn single_bin_eci_closed_form() {
    let p = vec![0.1f64; 20];
    let y: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
    assert!((eci(&p, &y, EciMethod::Binned(1)).unwrap().value - 16.0).abs() < 1e-9);
}

/// Intercept-only stream; the oracle MLE is the logit of the prevalence.
fn intercept_stream(seed: u64, t_steps: usize, n: usize, prev: &[f64]) -> Vec<LabeledBatch<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t_steps)
        .map(|t| {
            let q = prev[t * prev.len() / t_steps];
            let y = (0..n).map(|_| u8::from(rng.random::<f64>() < q)).collect();
            LabeledBatch::new(DMatrix::from_element(n, 1, 1.0), y).unwrap()
        })
        .collect()
}

/// Mean NLL of a constant parameter over `batches`, minimized on a fine grid.
fn grid_best_nll(batches: &[LabeledBatch<f64>]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=40_000 {
        let th = -4.0 + k as f64 * 2e-4;
        let mut s = 0.0;
        for b in batches {
            for &y in b.outcomes() {
                let p = sigmoid(th);
                s -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
            }
        }
        if s < best.0 {
            best = (s, th);
        }
    }
    best
}

#[test]
fn type2_regret_matches_grid_oracle() {
    let stream = intercept_stream(5, 40, 25, &[0.3, 0.8]);
    let tau = ShiftTimes::new(vec![1, 21], 40).unwrap();
    let cfg = MarBlrConfig::blr(dvector![0.0], dmatrix![1.0]).unwrap();
    let h = run(&cfg, &stream).unwrap();
    let reg = type2_regret(&h, &stream, &tau).unwrap();

    let (a, th_a) = grid_best_nll(&stream[..20]);
    let (b, th_b) = grid_best_nll(&stream[20..]);
    assert!((reg.oracle.thetas[0][0] - th_a).abs() < 1e-3);
    assert!((reg.oracle.thetas[1][0] - th_b).abs() < 1e-3);
    let mut reviser = 0.0;
    for s in &h.steps {
        for (&p, &y) in s.probs.iter().zip(&s.outcomes) {
            reviser -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    let expected = ((reviser - a - b) / 1000.0).max(0.0);
    assert!((reg.regret - expected).abs() < 1e-4, "{} vs {expected}", reg.regret);
}

#[test]
fn oracle_fits_are_stationary() {
    let stream = logistic_stream(21, 30, 20, &dvector![0.2, -0.8, 0.5]);
    let tau = ShiftTimes::new(vec![1, 11, 21], 30).unwrap();
    let fit = fit_oracles(&stream, &tau).unwrap();
    assert!(!fit.any_fallback());
    for ((start, end), th) in tau.segments().into_iter().zip(&fit.thetas) {
        let mut g = DVector::zeros(3);
        for b in &stream[start - 1..end - 1] {
            g += grad_hessian(b, th).unwrap().0;
        }
        assert!(g.amax() < 1e-8);
    }
}

#[test]
fn per_step_oracle_beats_reviser() {
    let stream = logistic_stream(22, 15, 30, &dvector![0.1, 1.2]);
    let cfg = MarBlrConfig::blr(dvector![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
    let h = run(&cfg, &stream).unwrap();
    let reg = type2_regret(&h, &stream, &ShiftTimes::every_step(15).unwrap()).unwrap();
    assert!(reg.cumulative_difference >= 0.0);
    assert!(!reg.oracle.any_fallback());
    // Each per-step oracle is the best single logistic fit, so it beats
    // plugging in the reviser's deployed mean.
    for ((b, s), o) in stream.iter().zip(&h.steps).zip(&reg.oracle_step_nll) {
        let mut plug = 0.0;
        for (i, &y) in b.outcomes().iter().enumerate() {
            let p = sigmoid(b.features().row(i).transpose().dot(&s.mean));
            plug -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        assert!(*o <= plug / b.len() as f64 + 1e-12);
    }
}

/// Largest eigenvalue by power iteration.
fn power_top(m: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_element(m.nrows(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..5_000 {
        let w = m * &v;
        lambda = w.norm();
        v = w / lambda;
    }
    lambda
}

#[test]
fn compute_r_matches_power_iteration() {
    let stream = logistic_stream(23, 12, 15, &dvector![0.4, -0.2, 0.9]);
    let tau = ShiftTimes::new(vec![1, 5, 9], 12).unwrap();
    let mut expected: f64 = 0.0;
    for (start, end) in tau.segments() {
        let mut gram = DMatrix::zeros(3, 3);
        let mut count = 0;
        for b in &stream[start - 1..end - 1] {
            for i in 0..b.len() {
                let z = b.features().row(i).transpose();
                gram += &z * z.transpose();
                count += 1;
            }
        }
        expected = expected.max((power_top(&(gram / count as f64))).sqrt());
    }
    assert!((compute_r(&stream, &tau).unwrap() - expected).abs() < 1e-8);
}

fn quad(sigma: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(sigma.clone().try_inverse().unwrap() * v))
}

fn sample_inputs(alpha: f64, delta2: f64) -> BoundInputs<f64> {
    BoundInputs {
        d: 2,
        n: 20,
        t_steps: 30,
        c: 0.25,
        r: 1.3,
        alpha,
        delta2,
        tau: ShiftTimes::new(vec![1, 8, 19], 30).unwrap(),
        tau_prime: None,
        theta_init: dvector![0.0, 1.0],
        sigma_init: dmatrix![0.5, 0.1; 0.1, 0.8],
        oracle_thetas: vec![dvector![0.3, 0.9], dvector![-0.4, 1.4], dvector![0.2, 0.6]],
        oracle_locked: Some(dvector![0.05, 0.95]),
    }
}

#[test]
fn bounds_match_direct_transcription() {
    let inp = sample_inputs(0.1, 0.2);
    let (d, n, tt, c, r): (f64, f64, f64, f64, f64) = (2.0, 20.0, 30.0, 0.25, 1.3);
    let tr: f64 = 1.3;
    let cnr = c * n * r * r;

    let t1 = d / 2.0 * (1.0 + cnr * tt * tr / d).ln()
        + d * 0.1 * (tt - 1.0) / 2.0 * (1.0 + 0.2 * cnr * tt * tr / (2.0 * d)).ln();
    assert!((type1_bound_marblr(&inp).unwrap() - t1).abs() < 1e-12);

    let locked = dvector![0.05, 0.95];
    let lens = [7.0, 11.0, 12.0];
    let mut blr = 0.5 * quad(&inp.sigma_init, &(&locked - &inp.theta_init))
        + d / 2.0 * ((d + cnr * tt * tr) / d).ln();
    for (len, th) in lens.iter().zip(&inp.oracle_thetas) {
        blr += cnr / 2.0 * len * (&locked - th).norm_squared();
    }
    assert!((type2_bound_blr(&inp).unwrap() - blr).abs() < 1e-12);

    // τ′ = (1, 19): the middle segment is charged against θ̃ at time 1.
    let mut with_tp = inp.clone();
    with_tp.tau_prime = Some(ShiftTimes::new(vec![1, 19], 30).unwrap());
    let th = &inp.oracle_thetas;
    let delta2: f64 = 0.2;
    let jump = &th[2] - &th[0];
    let mar = 0.5 * quad(&inp.sigma_init, &(&th[0] - &inp.theta_init))
        + d / 2.0 * (1.0 + 1.0 / delta2 + cnr * tr * 18.0 / d).ln()
        + 0.5 * (quad(&inp.sigma_init, &jump) / delta2 + d * (2.0 / delta2 + cnr * tr * 12.0 / d).ln())
        - (0.1f64.ln() + 28.0 * 0.9f64.ln())
        + d * delta2.sqrt().ln()
        + cnr / 2.0 * (11.0 * (&th[0] - &th[1]).norm_squared());
    let got = type2_bound_marblr(&with_tp, TauPrimeSearch::Given).unwrap().value;
    assert!((got - mar).abs() < 1e-12, "{got} vs {mar}");
}

#[test]
fn minimized_bound_is_no_larger_than_given() {
    for (alpha, delta2) in [(0.01, 0.1), (0.1, 0.01), (0.3, 1.0)] {
        let inp = sample_inputs(alpha, delta2);
        let given = type2_bound_marblr(&inp, TauPrimeSearch::Given).unwrap();
        let best = type2_bound_marblr(&inp, TauPrimeSearch::Minimize).unwrap();
        assert!(best.value <= given.value + 1e-12);
        assert!(best.tau_prime.is_subsequence_of(&inp.tau));
    }
}

#[test]
fn single_shift_prior() {
    for alpha in [0.0f64, 0.01, 0.2] {
        let t = 50;
        let lp = log_prior_shift_times(&ShiftTimes::single(t).unwrap(), alpha).unwrap();
        assert!((-lp + (t as f64 - 1.0) * (1.0 - alpha).ln()).abs() < 1e-12);
    }
    assert!(log_prior_shift_times(&ShiftTimes::new(vec![1, 3], 5).unwrap(), 0.0).is_err());
}

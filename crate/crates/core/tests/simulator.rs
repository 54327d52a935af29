use marblr_core::metrics::{auc, eci, EciMethod};
use marblr_core::simulator::{generate, oracle_tau, Scenario, ScenarioSpec, ShiftKind};

#[test]
fn group_prevalence_matches_scenario() {
    let spec = ScenarioSpec::new(Scenario::One, 200, 100, 4);
    let mut a = 0usize;
    let mut total = 0usize;
    for b in generate(&spec).unwrap() {
        let g = b.observed.group.expect("scenario 1 has groups");
        a += g.iter().filter(|&&v| v == 0).count();
        total += g.len();
    }
    let frac = a as f64 / total as f64;
    assert!((0.17..=0.23).contains(&frac), "{frac}");
}

#[test]
fn decay_erodes_original_discrimination() {
    let spec = ScenarioSpec::new(Scenario::Two(ShiftKind::Decay), 100, 100, 7);
    let batches = generate(&spec).unwrap();
    let aucs: Vec<f64> = batches
        .chunks(25)
        .map(|w| {
            let p: Vec<f64> = w.iter().flat_map(|b| b.observed.score.clone()).collect();
            let y: Vec<u8> = w.iter().flat_map(|b| b.observed.y.clone()).collect();
            auc(&p, &y).unwrap()
        })
        .collect();
    assert_eq!(aucs.len(), 4);
    for w in aucs.windows(2) {
        assert!(w[1] < w[0], "{aucs:?}");
    }
}

#[test]
fn original_model_is_calibrated_without_drift() {
    let mut spec = ScenarioSpec::new(Scenario::Two(ShiftKind::Decay), 100, 100, 8);
    spec.drift.decay_angle_deg = 0.0;
    spec.drift.decay_shrink = 0.0;
    let batches = generate(&spec).unwrap();
    let mut p = Vec::new();
    let mut y = Vec::new();
    for b in &batches {
        assert_eq!(b.observed.score, b.true_prob);
        p.extend_from_slice(&b.observed.score);
        y.extend_from_slice(&b.observed.y);
    }
    assert!(eci(&p, &y, EciMethod::Binned(10)).unwrap().value < 1.0);
}

#[test]
fn outcomes_track_true_probabilities() {
    for shift in [ShiftKind::InitialShift, ShiftKind::Cyclical, ShiftKind::Decay] {
        let spec = ScenarioSpec::new(Scenario::Two(shift), 100, 100, 9);
        let mut gap = 0.0;
        let mut var = 0.0;
        for b in generate(&spec).unwrap() {
            for (&q, &y) in b.true_prob.iter().zip(&b.observed.y) {
                gap += y as f64 - q;
                var += q * (1.0 - q);
            }
        }
        assert!(gap.abs() < 3.0 * var.sqrt(), "{shift:?}: {gap} vs sd {}", var.sqrt());
    }
}

#[test]
fn streams_are_pure_functions_of_the_spec() {
    for scenario in [Scenario::One, Scenario::Two(ShiftKind::Cyclical), Scenario::Three(ShiftKind::Decay)] {
        let spec = ScenarioSpec::new(scenario, 20, 10, 3).with_refit_corruption(5);
        assert_eq!(generate(&spec).unwrap(), generate(&spec.clone()).unwrap());
    }
}

#[test]
fn shift_times_follow_the_generator() {
    let spec = ScenarioSpec::new(Scenario::Three(ShiftKind::Cyclical), 100, 1, 0);
    let tau = oracle_tau(&spec).unwrap();
    assert_eq!(tau.as_slice()[..3], [1, 11, 21]);
    let mut decay = ScenarioSpec::new(Scenario::Two(ShiftKind::Decay), 30, 1, 0);
    decay.drift.decay_tau_grid = 100;
    assert_eq!(oracle_tau(&decay).unwrap().len(), 30);
}

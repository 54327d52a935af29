use marblr_core::revision::identity_revision_theta;
use marblr_core::simulator::{generate, observed, oracle_tau, Scenario, ScenarioSpec, ShiftKind};
use marblr_core::{prepare_stream, regret_report, FeatureMap, MarBlrConfig, RegretReport, RevisionVariant};
use nalgebra::DMatrix;

fn fixture(shift: ShiftKind, seed: u64) -> (Vec<marblr_core::LabeledBatch<f64>>, marblr_core::metrics::ShiftTimes) {
    let spec = ScenarioSpec::new(Scenario::Two(shift), 60, 20, seed);
    let map = FeatureMap::new(RevisionVariant::Recalibrate).unwrap();
    let stream = prepare_stream(&map, &observed(&generate(&spec).unwrap()), None).unwrap().batches;
    (stream, oracle_tau(&spec).unwrap())
}

#[test]
fn reports_are_consistent() {
    let (stream, tau) = fixture(ShiftKind::Cyclical, 1);
    let map = FeatureMap::<f64>::new(RevisionVariant::Recalibrate).unwrap();
    for (alpha, delta2) in [(0.0, 0.0), (0.05, 0.1)] {
        let cfg = MarBlrConfig::new(identity_revision_theta(&map), DMatrix::identity(2, 2), alpha, delta2).unwrap();
        let r = regret_report(&cfg, &stream, &tau, None, 1.0).unwrap();
        assert!(r.type1_empirical >= 0.0 && r.type2_empirical >= 0.0);
        assert_eq!(r.observations, 60 * 20);
        assert_eq!(r.per_step_nll.reviser.len(), 60);
        assert!((r.type1_bound_per_obs * r.observations as f64 - r.type1_bound).abs() < 1e-9);
        assert_eq!(r.type2_bound_marblr.is_some(), delta2 > 0.0);
        assert!(r.r_type1 >= r.r_type2 - 1e-12);
        assert!(r.pass, "{r:?}");
        let back: RegretReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}

#[test]
fn smaller_curvature_constant_tightens_bounds() {
    let (stream, tau) = fixture(ShiftKind::Decay, 2);
    let map = FeatureMap::<f64>::new(RevisionVariant::Recalibrate).unwrap();
    let cfg = MarBlrConfig::new(identity_revision_theta(&map), DMatrix::identity(2, 2), 0.1, 0.1).unwrap();
    let full = regret_report(&cfg, &stream, &tau, None, 1.0).unwrap();
    let quarter = regret_report(&cfg, &stream, &tau, None, 0.25).unwrap();
    assert!(quarter.type1_bound < full.type1_bound);
    assert!(quarter.type2_bound_blr < full.type2_bound_blr);
    assert_eq!(quarter.type2_empirical, full.type2_empirical);
}

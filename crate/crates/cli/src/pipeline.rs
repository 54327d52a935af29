//! Turning flags into streams, revision maps and reviser configurations.

use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context, Result};
use marblr_core::baselines::{run_cumulative_mle, run_locked};
use marblr_core::io::read_stream;
use marblr_core::metrics::ShiftTimes;
use marblr_core::revision::{identity_revision_theta, PreparedStream};
use marblr_core::simulator::{generate, observed, oracle_tau, Scenario, ScenarioSpec, ShiftKind, StreamBatch};
use marblr_core::{
    prepare_stream, run, CollapseMode, FeatureMap, MarBlrConfig, PredictiveMethod, RefitManager, RefitStrategy,
    RevisionVariant, RunHistory,
};
use nalgebra::{DMatrix, DVector};

use crate::{CollapseArg, MethodArg, MethodArgs, PredictiveArg, RefitArg, RevisionArg, ShiftArg, StreamArgs};

/// Raw batches plus the scenario that generated them, if any.
pub struct Source {
    pub raw: Vec<StreamBatch>,
    pub spec: Option<ScenarioSpec>,
}

pub fn scenario_spec(a: &StreamArgs) -> Result<ScenarioSpec> {
    let kind = match a.shift {
        ShiftArg::Initial => ShiftKind::InitialShift,
        ShiftArg::Cyclical => ShiftKind::Cyclical,
        ShiftArg::Decay => ShiftKind::Decay,
    };
    let scenario = match a.scenario {
        Some(1) => Scenario::One,
        Some(2) => Scenario::Two(kind),
        Some(3) => Scenario::Three(kind),
        _ => bail!("a scenario number (1, 2 or 3) is required"),
    };
    let mut spec = ScenarioSpec::new(scenario, a.t_steps, a.n, a.seed);
    spec.d_x = a.dx;
    if let Some(p) = a.period {
        spec.drift.cyclical_period = p;
    }
    if scenario == Scenario::Three(kind) && a.refit == Some(RefitArg::Subset) {
        spec = spec.with_refit_corruption(a.window);
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load(a: &StreamArgs) -> Result<Source> {
    match &a.input {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let parsed = read_stream(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
            if parsed.batches.is_empty() {
                bail!("{} holds no observations", path.display());
            }
            Ok(Source {
                raw: parsed.batches,
                spec: None,
            })
        }
        None => {
            let spec = scenario_spec(a)?;
            Ok(Source {
                raw: observed(&generate(&spec)?),
                spec: Some(spec),
            })
        }
    }
}

pub fn feature_map(rev: RevisionArg, a: &StreamArgs, src: &Source) -> Result<FeatureMap<f64>> {
    let vars = src.raw[0].x.ncols();
    let groups = || {
        src.raw
            .iter()
            .filter_map(|b| b.group.as_ref())
            .flatten()
            .max()
            .map_or(2, |&g| (g + 1).max(2))
    };
    let variant = match rev {
        RevisionArg::Auto => match (&src.spec, src.raw[0].group.is_some()) {
            (Some(spec), _) => match spec.scenario {
                Scenario::One => RevisionVariant::SubgroupRecalibrate { groups: 2 },
                Scenario::Two(_) => RevisionVariant::LogisticRevision { vars },
                Scenario::Three(_) => RevisionVariant::Ensemble { models: 2 },
            },
            (None, true) => RevisionVariant::SubgroupRecalibrate { groups: groups() },
            (None, false) if a.refit.is_some() => RevisionVariant::Ensemble { models: 2 },
            (None, false) => RevisionVariant::LogisticRevision { vars },
        },
        RevisionArg::Recalibrate => RevisionVariant::Recalibrate,
        RevisionArg::Subgroup => RevisionVariant::SubgroupRecalibrate { groups: groups() },
        RevisionArg::SubgroupSlope => RevisionVariant::SubgroupPerGroupSlope { groups: groups() },
        RevisionArg::Logistic => RevisionVariant::LogisticRevision { vars },
        RevisionArg::Ensemble => RevisionVariant::Ensemble { models: 2 },
    };
    Ok(FeatureMap::new(variant)?)
}

pub fn prepare(map: &FeatureMap<f64>, a: &StreamArgs, src: &Source) -> Result<PreparedStream<f64>> {
    if matches!(map.variant, RevisionVariant::Ensemble { .. }) {
        let strategy = match a.refit {
            Some(RefitArg::Subset) => RefitStrategy::SubsetRefit { window: a.window },
            _ => RefitStrategy::AllRefit,
        };
        let mut manager = RefitManager::new(strategy)?;
        let prepared = prepare_stream(map, &src.raw, Some(&mut manager))?;
        if !manager.skipped.is_empty() {
            log::info!("refits skipped at {} steps with a single outcome class", manager.skipped.len());
        }
        Ok(prepared)
    } else {
        if a.refit.is_some() {
            bail!("--refit only applies to the ensemble revision");
        }
        Ok(prepare_stream(map, &src.raw, None)?)
    }
}

fn parse_list<V: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<V>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| anyhow::anyhow!("bad {what} entry '{}'", v.trim())))
        .collect()
}

pub fn theta_init(s: &str, map: &FeatureMap<f64>) -> Result<DVector<f64>> {
    if s.trim() == "identity" {
        return Ok(identity_revision_theta(map));
    }
    let v: Vec<f64> = parse_list(s, "--theta-init")?;
    if v.len() != map.dim() {
        bail!("--theta-init has {} entries but the revision has {} parameters", v.len(), map.dim());
    }
    Ok(DVector::from_vec(v))
}

pub fn config(m: &MethodArgs, map: &FeatureMap<f64>, seed: u64) -> Result<MarBlrConfig<f64>> {
    let theta = theta_init(&m.theta_init, map)?;
    if !(m.sigma_init_scale > 0.0 && m.sigma_init_scale.is_finite()) {
        bail!("--sigma-init-scale must be positive");
    }
    let d = map.dim();
    let sigma = DMatrix::identity(d, d) * m.sigma_init_scale;
    let cfg = match m.method {
        MethodArg::Marblr => MarBlrConfig::new(theta, sigma, m.alpha, m.delta2)?,
        _ => MarBlrConfig::blr(theta, sigma)?,
    };
    let collapse = match m.collapse {
        CollapseArg::Averaged => CollapseMode::Averaged,
        CollapseArg::Full => CollapseMode::FullMoment,
    };
    let predictive = match m.predictive {
        PredictiveArg::Probit => PredictiveMethod::ProbitApprox,
        PredictiveArg::Mc => PredictiveMethod::MonteCarlo {
            samples: m.mc_samples,
            seed,
        },
    };
    Ok(cfg.with_collapse_mode(collapse).with_predictive_method(predictive))
}

pub fn run_method(m: MethodArg, cfg: &MarBlrConfig<f64>, stream: &PreparedStream<f64>) -> Result<RunHistory<f64>> {
    Ok(match m {
        MethodArg::Locked => run_locked(&cfg.theta_init, &stream.batches)?,
        MethodArg::CumulativeMle => run_cumulative_mle(&cfg.theta_init, &stream.batches)?,
        MethodArg::Blr | MethodArg::Marblr => run(cfg, &stream.batches)?,
    })
}

pub fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Locked => "locked",
        MethodArg::Blr => "blr",
        MethodArg::Marblr => "marblr",
        MethodArg::CumulativeMle => "cumulative-mle",
    }
}

/// `τ` from `--tau`, else the generator's, else a single segment.
pub fn shift_times(tau: Option<&str>, spec: Option<&ScenarioSpec>, horizon: usize) -> Result<ShiftTimes> {
    match (tau, spec) {
        (Some(s), _) => Ok(ShiftTimes::new(parse_list(s, "--tau")?, horizon)?),
        (None, Some(spec)) => Ok(oracle_tau(spec)?),
        (None, None) => Ok(ShiftTimes::single(horizon)?),
    }
}

pub fn parse_tau_prime(s: Option<&str>, horizon: usize) -> Result<Option<ShiftTimes>> {
    s.map(|s| Ok(ShiftTimes::new(parse_list(s, "--tau-prime")?, horizon)?))
        .transpose()
}

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use marblr_core::io::{read_predictions_csv, write_metrics_csv, write_params_csv, write_predictions_csv, write_stream};
use marblr_core::metrics::{self, cumulative_nll, windowed_metrics, EciMethod};
use marblr_core::revision::RevisionVariant;
use marblr_core::simulator::{generate, observed, ScenarioSpec};
use marblr_core::{regret_report, RegretReport};
use serde::Serialize;

use crate::pipeline::{self, Source};
use crate::{BoundArgs, CurveArgs, EciArg, MethodArg, RegretArgs, RunArgs, SimulateArgs};

/// Exit status of `regret-check` when an empirical regret exceeds its bound.
const BOUND_VIOLATED: u8 = 3;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Runs `f` against the file at `path`, or stdout when `path` is `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    if a.stream.input.is_some() {
        bail!("simulate generates a stream; --input is not accepted");
    }
    let spec = pipeline::scenario_spec(&a.stream)?;
    let batches = observed(&generate(&spec)?);
    let comments = vec![
        format!("marblr simulate, scenario {}", spec.scenario.number()),
        format!("spec {}", serde_json::to_string(&spec)?),
    ];
    with_output(a.out.as_deref(), |w| Ok(write_stream(w, &batches, &comments)?))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Summary {
    method: &'static str,
    revision: RevisionVariant,
    source: SourceInfo,
    d: usize,
    #[serde(rename = "T")]
    t_steps: usize,
    observations: usize,
    metric_window: usize,
    eci_method: EciMethod,
    average_eci: Option<f64>,
    average_auc: Option<f64>,
    mean_nll: f64,
    theta_init: Vec<f64>,
    /// Revision deployed at the last step.
    last_mean: Vec<f64>,
    last_branch_weights: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    regret: Option<RegretReport>,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum SourceInfo {
    Scenario(ScenarioSpec),
    Input(String),
}

fn source_info(a: &crate::StreamArgs, src: &Source) -> SourceInfo {
    match (&src.spec, &a.input) {
        (Some(spec), _) => SourceInfo::Scenario(spec.clone()),
        (None, Some(p)) => SourceInfo::Input(p.display().to_string()),
        (None, None) => unreachable!("a stream comes from a scenario or a file"),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn regret_for(
    method: MethodArg,
    cfg: &marblr_core::MarBlrConfig<f64>,
    stream: &[marblr_core::LabeledBatch<f64>],
    bounds: &BoundArgs,
    spec: Option<&ScenarioSpec>,
) -> Result<RegretReport> {
    if !matches!(method, MethodArg::Blr | MethodArg::Marblr) {
        bail!("regret reports are defined for --method blr or marblr");
    }
    let horizon = stream.len();
    let tau = pipeline::shift_times(bounds.tau.as_deref(), spec, horizon)?;
    let tau_prime = pipeline::parse_tau_prime(bounds.tau_prime.as_deref(), horizon)?;
    Ok(regret_report(cfg, stream, &tau, tau_prime.as_ref(), bounds.c)?)
}

pub fn run(a: &RunArgs) -> Result<ExitCode> {
    let src = pipeline::load(&a.stream)?;
    let map = pipeline::feature_map(a.method.revision, &a.stream, &src)?;
    let stream = pipeline::prepare(&map, &a.stream, &src)?;
    let cfg = pipeline::config(&a.method, &map, a.stream.seed)?;
    let history = pipeline::run_method(a.method.method, &cfg, &stream)?;

    let eci_method = match a.eci {
        EciArg::Binned => EciMethod::Binned(a.bins),
        EciArg::Logit => EciMethod::LogitSmooth,
    };
    let probs: Vec<Vec<f64>> = history.steps.iter().map(|s| s.probs.clone()).collect();
    let outcomes: Vec<Vec<u8>> = history.steps.iter().map(|s| s.outcomes.clone()).collect();
    let metrics = windowed_metrics(&probs, &outcomes, a.metric_window, eci_method)?;

    let regret = if a.with_regret {
        Some(regret_for(a.method.method, &cfg, &stream.batches, &a.regret, src.spec.as_ref())?)
    } else {
        None
    };
    let last = history.steps.last().context("empty run")?;
    let summary = Summary {
        method: pipeline::method_name(a.method.method),
        revision: map.variant,
        source: source_info(&a.stream, &src),
        d: map.dim(),
        t_steps: history.len(),
        observations: outcomes.iter().map(Vec::len).sum(),
        metric_window: a.metric_window,
        eci_method,
        average_eci: mean(metrics.iter().filter_map(|m| m.eci)),
        average_auc: mean(metrics.iter().filter_map(|m| m.auc)),
        mean_nll: cumulative_nll(&history.probabilities(), &history.outcomes())?,
        theta_init: cfg.theta_init.iter().copied().collect(),
        last_mean: last.mean.iter().copied().collect(),
        last_branch_weights: last.branch_weights,
        regret,
    };

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let dir = a.out_dir.as_path();
    let mut w = create(&dir.join("metrics.csv"))?;
    write_metrics_csv(&mut w, &metrics)?;
    w.flush()?;
    let mut w = create(&dir.join("params.csv"))?;
    write_params_csv(&mut w, &history)?;
    w.flush()?;
    let mut w = create(&dir.join("predictions.csv"))?;
    write_predictions_csv(&mut w, &history)?;
    w.flush()?;
    let mut w = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    log::info!("wrote run outputs to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

pub fn calibration_curve_rows(probs: &[Vec<f64>], outcomes: &[Vec<u8>], bins: usize) -> Result<Vec<String>> {
    if bins == 0 {
        bail!("--bins must be >= 1");
    }
    let t_max = probs.len();
    if t_max == 0 {
        bail!("no predictions to summarize");
    }
    let q = t_max.div_ceil(4);
    let mut rows = vec!["series,quarter,t_start,t_end,bin,predicted,observed,count".to_string()];
    for quarter in 0..4 {
        let (lo, hi) = (quarter * q, ((quarter + 1) * q).min(t_max));
        if lo >= hi {
            log::warn!("quarter {} is empty for T = {t_max}", quarter + 1);
            continue;
        }
        let p: Vec<f64> = probs[lo..hi].iter().flatten().copied().collect();
        let y: Vec<u8> = outcomes[lo..hi].iter().flatten().copied().collect();
        if p.is_empty() {
            continue;
        }
        for pt in metrics::calibration_curve(&p, &y, bins)? {
            rows.push(format!(
                "curve,{},{},{},{},{},{},{}",
                quarter + 1,
                lo + 1,
                hi,
                pt.bin,
                pt.predicted,
                pt.observed,
                pt.count
            ));
        }
    }
    for b in 0..bins {
        let v = (b as f64 + 0.5) / bins as f64;
        rows.push(format!("identity,,,,{b},{v},{v},0"));
    }
    Ok(rows)
}

pub fn calibration_curve(a: &CurveArgs) -> Result<ExitCode> {
    let path = match (&a.input, &a.run_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("predictions.csv"),
        (None, None) => bail!("give --run-dir or --input"),
    };
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let (probs, outcomes) = read_predictions_csv(BufReader::new(file))?;
    let rows = calibration_curve_rows(&probs, &outcomes, a.bins)?;
    with_output(a.out.as_deref(), |w| {
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

pub fn regret_check(a: &RegretArgs) -> Result<ExitCode> {
    let src = pipeline::load(&a.stream)?;
    let map = pipeline::feature_map(a.method.revision, &a.stream, &src)?;
    let stream = pipeline::prepare(&map, &a.stream, &src)?;
    let cfg = pipeline::config(&a.method, &map, a.stream.seed)?;
    let report = regret_for(a.method.method, &cfg, &stream.batches, &a.bounds, src.spec.as_ref())?;
    with_output(a.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        log::error!("empirical regret exceeds its bound");
        Ok(ExitCode::from(BOUND_VIOLATED))
    }
}

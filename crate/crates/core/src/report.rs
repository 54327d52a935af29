//! Empirical regrets paired with the theoretical bounds for one stream.

use serde::{Deserialize, Serialize};

use crate::baselines::run_locked;
use crate::engine::{run, MarBlrConfig, RunHistory};
use crate::error::{check_dim, Error, Result};
use crate::logistic::LabeledBatch;
use crate::metrics::{
    compute_r, nll_terms, type1_bound_marblr, type1_regret, type2_bound_blr, type2_bound_marblr, type2_regret,
    BoundInputs, ShiftTimes, TauPrimeSearch,
};
use crate::scalar::Real;

/// Per-step mean NLL of the three revisers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStepNll {
    pub reviser: Vec<f64>,
    pub locked: Vec<f64>,
    pub oracle: Vec<f64>,
}

/// Which Type II bound the pass flag is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Type2BoundKind {
    Blr,
    Marblr,
}

/// Regrets on two scales: `*_empirical` is the positive part of the mean
/// per-observation NLL difference, `*_cumulative` the unclamped summed
/// difference. Bounds are cumulative; `*_bound_per_obs` divides by the
/// number of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub c: f64,
    pub r_type1: f64,
    pub r_type2: f64,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub observations: usize,
    pub alpha: f64,
    pub delta2: f64,
    pub tau: Vec<usize>,
    pub tau_prime: Option<Vec<usize>>,
    pub trace_sigma: f64,

    pub type1_empirical: f64,
    pub type1_cumulative: f64,
    pub type1_bound: f64,
    pub type1_bound_per_obs: f64,
    pub type1_pass: bool,

    pub type2_empirical: f64,
    pub type2_cumulative: f64,
    pub type2_bound_blr: f64,
    pub type2_bound_marblr: Option<f64>,
    pub type2_applicable: Type2BoundKind,
    pub type2_bound_per_obs: f64,
    pub type2_pass: bool,

    pub oracle_ridge_fallback: bool,
    pub pass: bool,
    pub per_step_nll: PerStepNll,
}

fn step_nll<T: Real>(run: &RunHistory<T>) -> Result<Vec<f64>> {
    run.steps
        .iter()
        .map(|s| {
            let terms = nll_terms(&s.probs, &s.outcomes)?;
            let n = terms.len().max(1) as f64;
            Ok(terms.iter().map(|v| v.as_f64()).sum::<f64>() / n)
        })
        .collect()
}

/// Runs the reviser, the locked model and the τ-segment oracles on `stream`
/// and evaluates all three bounds.
///
/// `R` for the Type I bound is computed with a shift at every step, the most
/// demanding segmentation; the Type II bounds use `tau`. The pass flag for
/// Type II uses the BLR bound when `α = 0` and the MarBLR bound otherwise.
pub fn regret_report<T: Real>(
    config: &MarBlrConfig<T>,
    stream: &[LabeledBatch<T>],
    tau: &ShiftTimes,
    tau_prime: Option<&ShiftTimes>,
    c: T,
) -> Result<RegretReport> {
    config.validate()?;
    if stream.is_empty() {
        return Err(Error::invalid("regret report of an empty stream"));
    }
    check_dim("stream length vs shift-time horizon", tau.horizon(), stream.len())?;
    let t_steps = stream.len();
    let n = stream.iter().map(LabeledBatch::len).max().unwrap_or(0);
    let observations: usize = stream.iter().map(LabeledBatch::len).sum();

    let reviser = run(config, stream)?;
    let locked = run_locked(&config.theta_init, stream)?;
    let rev_terms = nll_terms(&reviser.probabilities(), &reviser.outcomes())?;
    let locked_terms = nll_terms(&locked.probabilities(), &locked.outcomes())?;
    let type1 = type1_regret(&rev_terms, &locked_terms)?;
    let type1_cumulative = rev_terms
        .iter()
        .zip(&locked_terms)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b));
    let type2 = type2_regret(&reviser, stream, tau)?;

    let r_type1 = compute_r(stream, &ShiftTimes::every_step(t_steps)?)?;
    let r_type2 = compute_r(stream, tau)?;
    let mut inputs = BoundInputs {
        d: config.dim(),
        n,
        t_steps,
        c,
        r: r_type1,
        alpha: config.alpha,
        delta2: config.delta2,
        tau: tau.clone(),
        tau_prime: tau_prime.cloned(),
        theta_init: config.theta_init.clone(),
        sigma_init: config.sigma_init.clone(),
        oracle_thetas: type2.oracle.thetas.clone(),
        oracle_locked: Some(type2.oracle.locked.clone()),
    };
    let type1_bound = type1_bound_marblr(&inputs)?;
    inputs.r = r_type2;
    let type2_bound_blr = type2_bound_blr(&inputs)?;
    let marblr = if config.delta2 > T::zero() {
        let search = if tau_prime.is_some() {
            TauPrimeSearch::Given
        } else {
            TauPrimeSearch::Minimize
        };
        Some(type2_bound_marblr(&inputs, search)?)
    } else {
        None
    };

    let obs = observations as f64;
    let type1_bound_f = type1_bound.as_f64();
    let type1_empirical = type1.as_f64();
    let type1_pass = type1_empirical <= type1_bound_f / obs;

    let (type2_applicable, applicable_bound) = match (&marblr, config.alpha > T::zero()) {
        (Some(b), true) => (Type2BoundKind::Marblr, b.value.as_f64()),
        (None, true) => return Err(Error::invalid("MarBLR with alpha > 0 needs delta2 > 0")),
        (_, false) => (Type2BoundKind::Blr, type2_bound_blr.as_f64()),
    };
    let type2_empirical = type2.regret.as_f64();
    let type2_pass = type2_empirical <= applicable_bound / obs;

    Ok(RegretReport {
        c: c.as_f64(),
        r_type1: r_type1.as_f64(),
        r_type2: r_type2.as_f64(),
        d: config.dim(),
        n,
        t_steps,
        observations,
        alpha: config.alpha.as_f64(),
        delta2: config.delta2.as_f64(),
        tau: tau.as_slice().to_vec(),
        tau_prime: marblr.as_ref().map(|b| b.tau_prime.as_slice().to_vec()),
        trace_sigma: inputs.trace_sigma().as_f64(),
        type1_empirical,
        type1_cumulative: type1_cumulative.as_f64(),
        type1_bound: type1_bound_f,
        type1_bound_per_obs: type1_bound_f / obs,
        type1_pass,
        type2_empirical,
        type2_cumulative: type2.cumulative_difference.as_f64(),
        type2_bound_blr: type2_bound_blr.as_f64(),
        type2_bound_marblr: marblr.as_ref().map(|b| b.value.as_f64()),
        type2_applicable,
        type2_bound_per_obs: applicable_bound / obs,
        type2_pass,
        oracle_ridge_fallback: type2.oracle.any_fallback(),
        pass: type1_pass && type2_pass,
        per_step_nll: PerStepNll {
            reviser: step_nll(&reviser)?,
            locked: step_nll(&locked)?,
            oracle: type2.oracle_step_nll.iter().map(|v| v.as_f64()).collect(),
        },
    })
}

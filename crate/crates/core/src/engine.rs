//! The online revision filter.
//!
//! The state holds two collapsed branches indexed by the switch indicator
//! `w ∈ {0, 1}` of the current step. Each step:
//!
//! 1. **predict**: every branch `w_prev` is carried forward twice, once
//!    unchanged (`w = 0`, probability `1 − α`) and once with its covariance
//!    inflated by `1 + δ²` (`w = 1`, probability `α`), giving a four-component
//!    predictive mixture;
//! 2. **update**: each component takes one Newton step on its penalized
//!    log-likelihood, is reweighted by a Laplace estimate of its marginal
//!    likelihood, and the components sharing a `w` are collapsed back to a
//!    single Gaussian.
//!
//! With `α = 0` and `δ² = 0` the recursion is plain Bayesian logistic
//! revision with a single Gaussian posterior.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::belief::{
    collapse_mixture, gaussian_log_density, inflate, log_det_from_cholesky, symmetrize, CollapseMode,
    GaussianBelief, WeightedComponent, WEIGHT_TOL,
};
use crate::error::{check_dim, Error, Result};
use crate::logistic::{grad_hessian, log_likelihood, newton_step, posterior_predictive, LabeledBatch, PredictiveMethod};
use crate::scalar::{ln_2pi, Real};

/// Log-weights this far below the maximum are treated as exactly zero.
pub const LOG_WEIGHT_FLOOR: f64 = 700.0;

/// Prior hyperparameters and numerical options of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MarBlrConfig<T: Real> {
    pub theta_init: DVector<T>,
    pub sigma_init: DMatrix<T>,
    /// Per-step switch probability.
    pub alpha: T,
    /// Jump variance as a multiple of `sigma_init`.
    pub delta2: T,
    pub collapse_mode: CollapseMode,
    pub predictive_method: PredictiveMethod,
}

impl<T: Real> MarBlrConfig<T> {
    pub fn new(theta_init: DVector<T>, sigma_init: DMatrix<T>, alpha: T, delta2: T) -> Result<Self> {
        let cfg = Self {
            theta_init,
            sigma_init,
            alpha,
            delta2,
            collapse_mode: CollapseMode::default(),
            predictive_method: PredictiveMethod::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static prior (`α = δ² = 0`).
    pub fn blr(theta_init: DVector<T>, sigma_init: DMatrix<T>) -> Result<Self> {
        Self::new(theta_init, sigma_init, T::zero(), T::zero())
    }

    pub fn with_collapse_mode(mut self, mode: CollapseMode) -> Self {
        self.collapse_mode = mode;
        self
    }

    pub fn with_predictive_method(mut self, method: PredictiveMethod) -> Self {
        self.predictive_method = method;
        self
    }

    pub fn dim(&self) -> usize {
        self.theta_init.len()
    }

    pub fn is_blr(&self) -> bool {
        self.alpha == T::zero() && self.delta2 == T::zero()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.delta2 >= T::zero()) || !self.delta2.is_finite() {
            return Err(Error::invalid(format!("delta2 must be >= 0, got {}", self.delta2)));
        }
        self.prior().map(|_| ())
    }

    pub fn prior(&self) -> Result<GaussianBelief<T>> {
        GaussianBelief::new(self.theta_init.clone(), self.sigma_init.clone())
    }

    fn transition(&self, w_now: usize) -> T {
        if w_now == 1 {
            self.alpha
        } else {
            T::one() - self.alpha
        }
    }
}

/// The complete filter state after `t − 1` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState<T: Real> {
    /// `branches[w]` holds the collapsed posterior given `W_t = w` and its
    /// probability. A zero-weight branch carries a placeholder belief.
    pub branches: [WeightedComponent<T>; 2],
    /// Index of the next step to be predicted (starts at 1).
    pub t: usize,
}

impl<T: Real> EngineState<T> {
    pub fn dim(&self) -> usize {
        self.branches[1].belief.dim()
    }

    pub fn branch_weights(&self) -> [T; 2] {
        [self.branches[0].weight, self.branches[1].weight]
    }

    /// Single-Gaussian summary of the two branches.
    pub fn summary(&self, mode: CollapseMode) -> Result<GaussianBelief<T>> {
        collapse_mixture(&self.branches, mode)
    }

    fn check(&self) -> Result<()> {
        let total = self.branches[0].weight + self.branches[1].weight;
        if (total - T::one()).abs() > T::lit(WEIGHT_TOL) {
            return Err(Error::invalid(format!("branch weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// One component of the predictive mixture, indexed by `(w_now, w_prev)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchComponent<T: Real> {
    pub w_now: usize,
    pub w_prev: usize,
    pub component: WeightedComponent<T>,
}

impl<T: Real> BranchComponent<T> {
    pub fn is_inert(&self) -> bool {
        self.component.is_inert()
    }
}

/// Distribution of `θ_t` given data up to `t − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMixture<T: Real> {
    /// Ordered `(0,0), (0,1), (1,0), (1,1)` as `(w_now, w_prev)`.
    pub components: Vec<BranchComponent<T>>,
}

impl<T: Real> PredictiveMixture<T> {
    pub fn active(&self) -> impl Iterator<Item = &BranchComponent<T>> {
        self.components.iter().filter(|c| !c.is_inert())
    }

    pub fn summary(&self, mode: CollapseMode) -> Result<GaussianBelief<T>> {
        let comps: Vec<_> = self.components.iter().map(|c| c.component.clone()).collect();
        collapse_mixture(&comps, mode)
    }
}

/// Initial state: the prior sits on branch `w = 1` with probability one.
pub fn init<T: Real>(config: &MarBlrConfig<T>) -> Result<EngineState<T>> {
    config.validate()?;
    let prior = config.prior()?;
    Ok(EngineState {
        branches: [
            WeightedComponent::new(T::zero(), prior.clone())?,
            WeightedComponent::new(T::one(), prior)?,
        ],
        t: 1,
    })
}

pub fn predict_step<T: Real>(state: &EngineState<T>, config: &MarBlrConfig<T>) -> Result<PredictiveMixture<T>> {
    state.check()?;
    check_dim("engine state vs config", config.dim(), state.dim())?;
    let mut components = Vec::with_capacity(4);
    for w_now in 0..2 {
        let factor = T::one() + config.delta2 * T::from_usize_lossy(w_now);
        for w_prev in 0..2 {
            let branch = &state.branches[w_prev];
            let weight = config.transition(w_now) * branch.weight;
            components.push(BranchComponent {
                w_now,
                w_prev,
                component: WeightedComponent::new(weight, inflate(&branch.belief, factor)?)?,
            });
        }
    }
    Ok(PredictiveMixture { components })
}

fn mixture_predict_row<T: Real>(mixture: &PredictiveMixture<T>, z: &DVector<T>, method: PredictiveMethod) -> Result<T> {
    let mut p = T::zero();
    for c in mixture.active() {
        p += c.component.weight * posterior_predictive(&c.component.belief, z, method)?;
    }
    Ok(p)
}

/// Prequential probabilities for the rows of `z_rows` under `θ_t | D^(t−1)`.
pub fn predict_proba<T: Real>(
    state: &EngineState<T>,
    config: &MarBlrConfig<T>,
    z_rows: &DMatrix<T>,
) -> Result<Vec<T>> {
    check_dim("predict_proba features", config.dim(), z_rows.ncols())?;
    let mixture = predict_step(state, config)?;
    (0..z_rows.nrows())
        .map(|i| {
            let z = z_rows.row(i).transpose();
            mixture_predict_row(&mixture, &z, config.predictive_method)
        })
        .collect()
}

struct Updated<T: Real> {
    w_now: usize,
    log_weight: T,
    belief: GaussianBelief<T>,
}

fn update_component<T: Real>(comp: &BranchComponent<T>, batch: &LabeledBatch<T>) -> Result<Updated<T>> {
    let prior = &comp.component.belief;
    let prior_chol = prior.cholesky()?;
    let prior_precision = prior_chol.inverse();
    let center = prior.mean();

    // The log-prior gradient vanishes at its own mean.
    let (grad, hess) = grad_hessian(batch, center)?;
    let (theta_hat, cov) = newton_step(center, &grad, &(hess - &prior_precision))?;
    let belief = GaussianBelief::new(theta_hat.clone(), cov)?;

    // Laplace estimate of the marginal likelihood, curvature taken at the new mode.
    let (_, hess_at_mode) = grad_hessian(batch, &theta_hat)?;
    let neg = symmetrize(&(prior_precision - hess_at_mode));
    let curvature = Cholesky::new(neg).ok_or(Error::DegenerateHessian("Laplace curvature"))?;
    let half = T::lit(0.5);
    let d = T::from_usize_lossy(theta_hat.len());
    let log_evidence = half * d * ln_2pi::<T>() - half * log_det_from_cholesky(&curvature)
        + log_likelihood(batch, &theta_hat)?
        + gaussian_log_density(&theta_hat, prior)?;

    Ok(Updated {
        w_now: comp.w_now,
        log_weight: comp.component.weight.ln() + log_evidence,
        belief,
    })
}

/// Absorbs one labeled batch and returns the state for step `t + 1`.
pub fn update_step<T: Real>(
    state: &EngineState<T>,
    config: &MarBlrConfig<T>,
    batch: &LabeledBatch<T>,
) -> Result<EngineState<T>> {
    check_dim("update_step batch", config.dim(), batch.dim())?;
    let mixture = predict_step(state, config)?;
    let updated = mixture
        .active()
        .map(|c| update_component(c, batch))
        .collect::<Result<Vec<_>>>()?;

    let max_log = updated
        .iter()
        .map(|u| u.log_weight)
        .reduce(|a, b| if b > a { b } else { a })
        .ok_or(Error::ZeroWeights)?;
    if !max_log.is_finite() {
        return Err(Error::DegenerateHessian("non-finite branch evidence"));
    }
    let floor = T::lit(LOG_WEIGHT_FLOOR);
    let raw: Vec<T> = updated
        .iter()
        .map(|u| {
            let rel = u.log_weight - max_log;
            if rel < -floor {
                T::zero()
            } else {
                rel.exp()
            }
        })
        .collect();
    let total = raw.iter().fold(T::zero(), |a, &b| a + b);

    let mut per_branch: [Vec<WeightedComponent<T>>; 2] = [Vec::new(), Vec::new()];
    for (u, w) in updated.into_iter().zip(raw) {
        per_branch[u.w_now].push(WeightedComponent {
            weight: w / total,
            belief: u.belief,
        });
    }

    let collapse = |comps: &[WeightedComponent<T>]| -> Result<Option<(T, GaussianBelief<T>)>> {
        let mass = comps.iter().fold(T::zero(), |a, c| a + c.weight);
        if mass > T::zero() {
            Ok(Some((mass, collapse_mixture(comps, config.collapse_mode)?)))
        } else {
            Ok(None)
        }
    };
    let b0 = collapse(&per_branch[0])?;
    let b1 = collapse(&per_branch[1])?;
    let (branch0, branch1) = match (b0, b1) {
        (Some((m0, g0)), Some((m1, g1))) => {
            let mass = m0 + m1;
            (
                WeightedComponent { weight: m0 / mass, belief: g0 },
                WeightedComponent { weight: m1 / mass, belief: g1 },
            )
        }
        (Some((_, g0)), None) => (
            WeightedComponent { weight: T::one(), belief: g0.clone() },
            WeightedComponent { weight: T::zero(), belief: g0 },
        ),
        (None, Some((_, g1))) => (
            WeightedComponent { weight: T::zero(), belief: g1.clone() },
            WeightedComponent { weight: T::one(), belief: g1 },
        ),
        (None, None) => return Err(Error::ZeroWeights),
    };
    Ok(EngineState {
        branches: [branch0, branch1],
        t: state.t + 1,
    })
}

/// Per-step record of a prequential run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T: Real> {
    pub t: usize,
    /// Probabilities issued before the batch's outcomes were seen.
    pub probs: Vec<T>,
    pub outcomes: Vec<u8>,
    /// Collapsed mean and covariance of `θ_t | D^(t−1)`, the revision deployed at `t`.
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    /// Branch probabilities `Pr(W_{t−1} = w | D^(t−1))` before the update.
    pub branch_weights: [T; 2],
}

/// Output of [`run_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory<T: Real> {
    pub steps: Vec<StepRecord<T>>,
    /// State after the final update.
    pub final_state: Option<EngineState<T>>,
}

impl<T: Real> RunHistory<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.steps.iter().flat_map(|s| s.probs.iter().copied()).collect()
    }

    pub fn outcomes(&self) -> Vec<u8> {
        self.steps.iter().flat_map(|s| s.outcomes.iter().copied()).collect()
    }
}

/// Runs the filter prequentially over `stream`. The observer sees every
/// step record together with the pre-update state.
pub fn run_stream<T, F>(
    config: &MarBlrConfig<T>,
    stream: &[LabeledBatch<T>],
    mut observer: Option<F>,
) -> Result<RunHistory<T>>
where
    T: Real,
    F: FnMut(&StepRecord<T>, &EngineState<T>),
{
    let mut state = init(config)?;
    let mut steps = Vec::with_capacity(stream.len());
    for batch in stream {
        check_dim("run_stream batch", config.dim(), batch.dim())?;
        let mixture = predict_step(&state, config)?;
        let probs = (0..batch.len())
            .map(|i| {
                let z = batch.features().row(i).transpose();
                mixture_predict_row(&mixture, &z, config.predictive_method)
            })
            .collect::<Result<Vec<_>>>()?;
        let deployed = mixture.summary(config.collapse_mode)?;
        let record = StepRecord {
            t: state.t,
            probs,
            outcomes: batch.outcomes().to_vec(),
            mean: deployed.mean().clone(),
            cov: deployed.cov().clone(),
            branch_weights: state.branch_weights(),
        };
        if let Some(obs) = observer.as_mut() {
            obs(&record, &state);
        }
        steps.push(record);
        state = update_step(&state, config, batch)?;
    }
    Ok(RunHistory {
        final_state: if steps.is_empty() { None } else { Some(state) },
        steps,
    })
}

/// Convenience wrapper without an observer.
pub fn run<T: Real>(config: &MarBlrConfig<T>, stream: &[LabeledBatch<T>]) -> Result<RunHistory<T>> {
    run_stream::<T, fn(&StepRecord<T>, &EngineState<T>)>(config, stream, None)
}

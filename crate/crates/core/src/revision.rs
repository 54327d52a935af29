//! Feature maps that turn an underlying model's output into revision
//! features, and the refit manager for a continually refitted underlying model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::logistic::{fit_mle, LabeledBatch};
use crate::scalar::{logit, sigmoid, Real};
use crate::simulator::StreamBatch;

/// Default clipping applied to scores before taking logits.
pub const DEFAULT_CLIP_EPS: f64 = 1e-4;
/// Default ridge for refitting the underlying model.
pub const DEFAULT_REFIT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevisionVariant {
    /// `[1, logit f̂]`.
    Recalibrate,
    /// `[logit f̂, one-hot group]`: shared slope, one intercept per group.
    SubgroupRecalibrate { groups: usize },
    /// `[one-hot group, one-hot group · logit f̂]`: intercept and slope per group.
    SubgroupPerGroupSlope { groups: usize },
    /// `[1, logit f̂, x₁, …, x_vars]`.
    LogisticRevision { vars: usize },
    /// `[1, logit f̂₁, …, logit f̂_models]`.
    Ensemble { models: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMap<T: Real> {
    pub variant: RevisionVariant,
    pub logit_clip_eps: T,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(variant: RevisionVariant) -> Result<Self> {
        Self::with_clip(variant, T::lit(DEFAULT_CLIP_EPS))
    }

    pub fn with_clip(variant: RevisionVariant, eps: T) -> Result<Self> {
        if !(eps > T::zero() && eps < T::lit(0.5)) {
            return Err(Error::invalid(format!("logit clip must lie in (0, 0.5), got {eps}")));
        }
        match variant {
            RevisionVariant::SubgroupRecalibrate { groups: 0 }
            | RevisionVariant::SubgroupPerGroupSlope { groups: 0 } => {
                return Err(Error::invalid("subgroup revision needs at least one group"))
            }
            RevisionVariant::Ensemble { models: 0 } => {
                return Err(Error::invalid("ensemble needs at least one model"))
            }
            _ => {}
        }
        Ok(Self {
            variant,
            logit_clip_eps: eps,
        })
    }

    pub fn dim(&self) -> usize {
        match self.variant {
            RevisionVariant::Recalibrate => 2,
            RevisionVariant::SubgroupRecalibrate { groups } => groups + 1,
            RevisionVariant::SubgroupPerGroupSlope { groups } => 2 * groups,
            RevisionVariant::LogisticRevision { vars } => vars + 2,
            RevisionVariant::Ensemble { models } => models + 1,
        }
    }

    /// Number of model scores the map consumes.
    pub fn score_count(&self) -> usize {
        match self.variant {
            RevisionVariant::Ensemble { models } => models,
            _ => 1,
        }
    }

    pub fn needs_group(&self) -> bool {
        matches!(
            self.variant,
            RevisionVariant::SubgroupRecalibrate { .. } | RevisionVariant::SubgroupPerGroupSlope { .. }
        )
    }

    fn clipped_logit(&self, score: T) -> Result<T> {
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::invalid(format!("score must lie in [0, 1], got {score}")));
        }
        let lo = self.logit_clip_eps;
        let hi = T::one() - lo;
        let p = if score < lo {
            lo
        } else if score > hi {
            hi
        } else {
            score
        };
        Ok(logit(p))
    }
}

/// Builds the revision feature vector `z` for one observation.
pub fn build_features<T: Real>(
    map: &FeatureMap<T>,
    scores: &[T],
    x: &[T],
    group: Option<usize>,
) -> Result<DVector<T>> {
    check_dim("model scores", map.score_count(), scores.len())?;
    let mut z = DVector::zeros(map.dim());
    match map.variant {
        RevisionVariant::Recalibrate => {
            z[0] = T::one();
            z[1] = map.clipped_logit(scores[0])?;
        }
        RevisionVariant::SubgroupRecalibrate { groups } => {
            let g = group_index(group, groups)?;
            z[0] = map.clipped_logit(scores[0])?;
            z[1 + g] = T::one();
        }
        RevisionVariant::SubgroupPerGroupSlope { groups } => {
            let g = group_index(group, groups)?;
            z[g] = T::one();
            z[groups + g] = map.clipped_logit(scores[0])?;
        }
        RevisionVariant::LogisticRevision { vars } => {
            check_dim("patient variables", vars, x.len())?;
            z[0] = T::one();
            z[1] = map.clipped_logit(scores[0])?;
            for (k, &v) in x.iter().enumerate() {
                z[2 + k] = v;
            }
        }
        RevisionVariant::Ensemble { .. } => {
            z[0] = T::one();
            for (k, &s) in scores.iter().enumerate() {
                z[1 + k] = map.clipped_logit(s)?;
            }
        }
    }
    Ok(z)
}

fn group_index(group: Option<usize>, groups: usize) -> Result<usize> {
    let g = group.ok_or_else(|| Error::invalid("subgroup revision requires a group id"))?;
    if g >= groups {
        return Err(Error::invalid(format!("group id {g} out of range for {groups} groups")));
    }
    Ok(g)
}

/// Parameters under which the revision reproduces the (clipped) first
/// model score exactly.
pub fn identity_revision_theta<T: Real>(map: &FeatureMap<T>) -> DVector<T> {
    let mut theta = DVector::zeros(map.dim());
    match map.variant {
        RevisionVariant::SubgroupRecalibrate { .. } => theta[0] = T::one(),
        RevisionVariant::SubgroupPerGroupSlope { groups } => {
            for g in 0..groups {
                theta[groups + g] = T::one();
            }
        }
        _ => theta[1] = T::one(),
    }
    theta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefitStrategy {
    AllRefit,
    SubsetRefit { window: usize },
}

/// Continually refitted logistic model on `[1, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefitManager<T: Real> {
    pub strategy: RefitStrategy,
    /// Current coefficients (intercept first); `None` before the first fit.
    pub model_params: Option<DVector<T>>,
    pub refit_every: usize,
    pub ridge: T,
    /// Times at which a refit was skipped because the data had one class.
    pub skipped: Vec<usize>,
}

impl<T: Real> RefitManager<T> {
    pub fn new(strategy: RefitStrategy) -> Result<Self> {
        Self::with_options(strategy, 1, T::lit(DEFAULT_REFIT_RIDGE))
    }

    pub fn with_options(strategy: RefitStrategy, refit_every: usize, ridge: T) -> Result<Self> {
        if refit_every == 0 {
            return Err(Error::invalid("refit_every must be >= 1"));
        }
        if let RefitStrategy::SubsetRefit { window: 0 } = strategy {
            return Err(Error::invalid("refit window must be >= 1"));
        }
        if !(ridge >= T::zero()) {
            return Err(Error::invalid("ridge must be non-negative"));
        }
        Ok(Self {
            strategy,
            model_params: None,
            refit_every,
            ridge,
            skipped: Vec::new(),
        })
    }

    /// Refits on `history` (raw features, outcomes) when `t` is a refit time.
    /// Returns whether the parameters changed.
    pub fn maybe_refit(&mut self, history: &[LabeledBatch<T>], t: usize) -> Result<bool> {
        if t == 0 {
            return Err(Error::invalid("refit time must be >= 1"));
        }
        if t % self.refit_every != 0 || history.is_empty() {
            return Ok(false);
        }
        let used = match self.strategy {
            RefitStrategy::AllRefit => history,
            RefitStrategy::SubsetRefit { window } => &history[history.len().saturating_sub(window)..],
        };
        let (mut pos, mut total) = (0usize, 0usize);
        for b in used {
            pos += b.outcomes().iter().filter(|&&y| y == 1).count();
            total += b.len();
        }
        if pos == 0 || pos == total {
            log::debug!("refit at t={t} skipped: single outcome class");
            self.skipped.push(t);
            return Ok(false);
        }
        let design: Vec<LabeledBatch<T>> = used.iter().map(with_intercept).collect::<Result<_>>()?;
        let d = used[0].dim() + 1;
        let init = self.model_params.clone().unwrap_or_else(|| DVector::zeros(d));
        let fit = fit_mle(&design, &init, self.ridge)?;
        if !fit.converged {
            log::debug!("refit at t={t} stopped after {} iterations", fit.iterations);
        }
        self.model_params = Some(fit.theta);
        Ok(true)
    }

    /// Probability from the refitted model, if it has been fitted.
    pub fn score(&self, x: &[T]) -> Option<T> {
        let p = self.model_params.as_ref()?;
        let eta = x.iter().zip(p.iter().skip(1)).fold(p[0], |acc, (&a, &b)| acc + a * b);
        Some(sigmoid(eta))
    }
}

fn with_intercept<T: Real>(b: &LabeledBatch<T>) -> Result<LabeledBatch<T>> {
    let z = b.features();
    let design = DMatrix::from_fn(z.nrows(), z.ncols() + 1, |i, j| if j == 0 { T::one() } else { z[(i, j - 1)] });
    LabeledBatch::new(design, b.outcomes().to_vec())
}

/// Revision features for a whole stream, computed prequentially.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStream<T: Real> {
    pub batches: Vec<LabeledBatch<T>>,
    /// Scores of the refitted underlying model per step, when one is used.
    pub refit_scores: Option<Vec<Vec<T>>>,
}

/// Converts raw batches into revision batches. With a refit manager, the
/// model deployed at step `t` is fitted on the refit labels of steps `< t`
/// and serves as the second ensemble member (falling back to the original
/// score until its first successful fit).
pub fn prepare_stream<T: Real>(
    map: &FeatureMap<T>,
    raw: &[StreamBatch],
    mut refit: Option<&mut RefitManager<T>>,
) -> Result<PreparedStream<T>> {
    let wants_refit = matches!(map.variant, RevisionVariant::Ensemble { models: 2 });
    if wants_refit != refit.is_some() {
        return Err(Error::invalid(
            "a refit manager is required exactly for two-model ensembles",
        ));
    }
    if let RevisionVariant::Ensemble { models } = map.variant {
        if models > 2 {
            return Err(Error::invalid("ensembles of more than two models are not supported for raw streams"));
        }
    }
    let mut out = Vec::with_capacity(raw.len());
    let mut refit_scores = refit.as_ref().map(|_| Vec::with_capacity(raw.len()));
    let mut history: Vec<LabeledBatch<T>> = Vec::with_capacity(raw.len());
    for (idx, b) in raw.iter().enumerate() {
        let n = b.len();
        let mut rows = Vec::with_capacity(n);
        let mut step_refit = Vec::new();
        for i in 0..n {
            let x: Vec<T> = b.x.row(i).iter().map(|&v| T::lit(v)).collect();
            let original = T::lit(b.score[i]);
            let group = b.group.as_ref().map(|g| g[i]);
            let z = match refit.as_deref() {
                Some(manager) => {
                    let s = manager.score(&x).unwrap_or(original);
                    step_refit.push(s);
                    build_features(map, &[original, s], &x, group)?
                }
                None => build_features(map, &[original], &x, group)?,
            };
            rows.push(z);
        }
        out.push(LabeledBatch::from_rows(&rows, b.y.clone(), map.dim())?);
        if let Some(manager) = refit.as_deref_mut() {
            refit_scores.as_mut().expect("refit scores allocated").push(step_refit);
            let x = DMatrix::from_fn(n, b.x.ncols(), |i, j| T::lit(b.x[(i, j)]));
            history.push(LabeledBatch::new(x, b.refit_y.clone())?);
            manager.maybe_refit(&history, idx + 1)?;
        }
    }
    Ok(PreparedStream {
        batches: out,
        refit_scores,
    })
}

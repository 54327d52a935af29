use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::engine::RunHistory;
use crate::error::{check_dim, Error, Result};
use crate::logistic::{fit_mle, LabeledBatch};
use crate::metrics::calibration::nll_terms;
use crate::scalar::{sigmoid, Real};

/// Ridge used for an oracle segment whose unpenalized fit does not converge.
pub const ORACLE_FALLBACK_RIDGE: f64 = 1e-8;

/// Strictly increasing 1-based shift times starting at 1, within `1..=T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShiftTimesRepr", into = "ShiftTimesRepr")]
pub struct ShiftTimes {
    times: Vec<usize>,
    horizon: usize,
}

#[derive(Serialize, Deserialize)]
struct ShiftTimesRepr {
    times: Vec<usize>,
    horizon: usize,
}

impl TryFrom<ShiftTimesRepr> for ShiftTimes {
    type Error = Error;

    fn try_from(r: ShiftTimesRepr) -> Result<Self> {
        ShiftTimes::new(r.times, r.horizon)
    }
}

impl From<ShiftTimes> for ShiftTimesRepr {
    fn from(s: ShiftTimes) -> Self {
        ShiftTimesRepr {
            times: s.times,
            horizon: s.horizon,
        }
    }
}

impl ShiftTimes {
    pub fn new(times: Vec<usize>, horizon: usize) -> Result<Self> {
        if times.first() != Some(&1) {
            return Err(Error::invalid("shift times must start at 1"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("shift times must be strictly increasing"));
        }
        if *times.last().unwrap_or(&0) > horizon {
            return Err(Error::invalid(format!("shift times exceed horizon T = {horizon}")));
        }
        Ok(ShiftTimes { times, horizon })
    }

    /// Only the initial segment.
    pub fn single(horizon: usize) -> Result<Self> {
        Self::new(vec![1], horizon)
    }

    /// A shift at every step.
    pub fn every_step(horizon: usize) -> Result<Self> {
        Self::new((1..=horizon).collect(), horizon)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Segments as 1-based half-open ranges `[τ_j, τ_{j+1})`.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        self.times
            .iter()
            .enumerate()
            .map(|(j, &s)| (s, self.times.get(j + 1).copied().unwrap_or(self.horizon + 1)))
            .collect()
    }

    /// Index of the segment containing step `t`.
    pub fn segment_of(&self, t: usize) -> usize {
        self.times.partition_point(|&s| s <= t) - 1
    }

    pub fn is_subsequence_of(&self, other: &ShiftTimes) -> bool {
        self.horizon == other.horizon && self.times.iter().all(|t| other.times.binary_search(t).is_ok())
    }
}

fn check_stream<T: Real>(stream: &[LabeledBatch<T>], tau: &ShiftTimes) -> Result<()> {
    check_dim("stream length vs shift-time horizon", tau.horizon(), stream.len())
}

/// Positive part of the mean per-observation NLL difference (reviser − locked).
pub fn type1_regret<T: Real>(reviser_nll: &[T], locked_nll: &[T]) -> Result<T> {
    mean_positive_gap(reviser_nll, locked_nll)
}

fn mean_positive_gap<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    check_dim("NLL series", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::invalid("regret of empty NLL series"));
    }
    let diff = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y));
    let mean = diff / T::from_usize_lossy(a.len());
    Ok(if mean > T::zero() { mean } else { T::zero() })
}

/// Probabilities of a fixed parameter vector on every batch.
pub fn locked_probabilities<T: Real>(theta: &DVector<T>, stream: &[LabeledBatch<T>]) -> Result<Vec<Vec<T>>> {
    stream
        .iter()
        .map(|b| {
            check_dim("locked probabilities", theta.len(), b.dim())?;
            Ok((b.features() * theta).iter().map(|&eta| sigmoid(eta)).collect())
        })
        .collect()
}

/// Segment-wise maximum-likelihood parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit<T: Real> {
    /// `θ̃_{τ_j}` for each segment.
    pub thetas: Vec<DVector<T>>,
    /// Whole-stream fit, the best locked model in retrospect.
    pub locked: DVector<T>,
    /// Segments that needed the fallback ridge.
    pub segment_fallback: Vec<bool>,
    pub locked_fallback: bool,
}

impl<T: Real> OracleFit<T> {
    pub fn any_fallback(&self) -> bool {
        self.locked_fallback || self.segment_fallback.iter().any(|&f| f)
    }
}

fn fit_with_fallback<T: Real>(data: &[LabeledBatch<T>], dim: usize) -> Result<(DVector<T>, bool)> {
    let zero = DVector::zeros(dim);
    let fit = fit_mle(data, &zero, T::zero())?;
    if fit.converged {
        return Ok((fit.theta, false));
    }
    log::warn!("oracle fit did not converge without a ridge; using {ORACLE_FALLBACK_RIDGE}");
    let fit = fit_mle(data, &zero, T::lit(ORACLE_FALLBACK_RIDGE))?;
    if !fit.converged {
        log::warn!("oracle fit with fallback ridge stopped at gradient {}", fit.final_grad_norm.as_f64());
    }
    Ok((fit.theta, true))
}

/// Fits `θ̃` on every τ-segment and on the whole stream.
pub fn fit_oracles<T: Real>(stream: &[LabeledBatch<T>], tau: &ShiftTimes) -> Result<OracleFit<T>> {
    check_stream(stream, tau)?;
    let dim = stream.first().map(LabeledBatch::dim).ok_or(Error::invalid("empty stream"))?;
    let mut thetas = Vec::with_capacity(tau.len());
    let mut segment_fallback = Vec::with_capacity(tau.len());
    for (start, end) in tau.segments() {
        let (theta, fb) = fit_with_fallback(&stream[start - 1..end - 1], dim)?;
        thetas.push(theta);
        segment_fallback.push(fb);
    }
    let (locked, locked_fallback) = fit_with_fallback(stream, dim)?;
    Ok(OracleFit {
        thetas,
        locked,
        segment_fallback,
        locked_fallback,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Type2Regret<T: Real> {
    /// Positive part of the mean per-observation NLL difference.
    pub regret: T,
    /// Unclamped summed NLL difference (reviser − oracle).
    pub cumulative_difference: T,
    pub oracle: OracleFit<T>,
    /// Per-step mean NLL of the reviser and the oracle (0 for empty steps).
    pub reviser_step_nll: Vec<T>,
    pub oracle_step_nll: Vec<T>,
}

fn step_mean<T: Real>(terms: &[T]) -> T {
    if terms.is_empty() {
        T::zero()
    } else {
        terms.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(terms.len())
    }
}

/// Type II τ-regret of a recorded run against the segment oracles.
pub fn type2_regret<T: Real>(run: &RunHistory<T>, stream: &[LabeledBatch<T>], tau: &ShiftTimes) -> Result<Type2Regret<T>> {
    check_stream(stream, tau)?;
    check_dim("run length vs stream", stream.len(), run.len())?;
    let oracle = fit_oracles(stream, tau)?;
    let mut rev_all = Vec::new();
    let mut orc_all = Vec::new();
    let mut reviser_step_nll = Vec::with_capacity(stream.len());
    let mut oracle_step_nll = Vec::with_capacity(stream.len());
    for (idx, (batch, step)) in stream.iter().zip(&run.steps).enumerate() {
        if step.outcomes.as_slice() != batch.outcomes() {
            return Err(Error::invalid(format!("run outcomes differ from stream at step {}", idx + 1)));
        }
        let theta = &oracle.thetas[tau.segment_of(idx + 1)];
        let orc_probs: Vec<T> = (batch.features() * theta).iter().map(|&e| sigmoid(e)).collect();
        let rev = nll_terms(&step.probs, batch.outcomes())?;
        let orc = nll_terms(&orc_probs, batch.outcomes())?;
        reviser_step_nll.push(step_mean(&rev));
        oracle_step_nll.push(step_mean(&orc));
        rev_all.extend(rev);
        orc_all.extend(orc);
    }
    let cumulative_difference = rev_all
        .iter()
        .zip(&orc_all)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b));
    Ok(Type2Regret {
        regret: mean_positive_gap(&rev_all, &orc_all)?,
        cumulative_difference,
        oracle,
        reviser_step_nll,
        oracle_step_nll,
    })
}

/// Smallest `R` with `(1/N_j) Σ z zᵀ ⪯ R² I` on every τ-segment.
pub fn compute_r<T: Real>(stream: &[LabeledBatch<T>], tau: &ShiftTimes) -> Result<T> {
    check_stream(stream, tau)?;
    let mut r = T::zero();
    for (start, end) in tau.segments() {
        let seg = &stream[start - 1..end - 1];
        let count: usize = seg.iter().map(LabeledBatch::len).sum();
        if count == 0 {
            continue;
        }
        let dim = seg[0].dim();
        let mut gram = DMatrix::<T>::zeros(dim, dim);
        for b in seg {
            gram += b.features().tr_mul(b.features());
        }
        gram /= T::from_usize_lossy(count);
        let top = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .fold(T::zero(), |m, &v| if v > m { v } else { m });
        let seg_r = top.sqrt();
        if seg_r > r {
            r = seg_r;
        }
    }
    Ok(r)
}

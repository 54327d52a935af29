use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::logistic::{fit_mle, LabeledBatch};
use crate::scalar::{logit, sigmoid, Real};

/// Smallest sample accepted by [`eci`].
pub const MIN_ECI_SAMPLES: usize = 20;
/// Probabilities are clipped to `[NLL_CLIP, 1 − NLL_CLIP]` before taking logs.
pub const NLL_CLIP: f64 = 1e-12;

/// Estimator of the calibration curve used by [`eci`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EciMethod {
    /// `k` equal-count bins; the curve is the bin outcome mean.
    Binned(usize),
    /// Logistic regression of `y` on `[1, logit p]`.
    LogitSmooth,
}

impl Default for EciMethod {
    fn default() -> Self {
        EciMethod::Binned(10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EciEstimate<T: Real> {
    pub value: T,
    /// Set when all outcomes belong to one class; the value is then of
    /// limited meaning.
    pub single_class: bool,
}

fn check_pairs<T: Real>(probs: &[T], outcomes: &[u8]) -> Result<()> {
    check_dim("probabilities vs outcomes", probs.len(), outcomes.len())?;
    if probs.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    if outcomes.iter().any(|&y| y > 1) {
        return Err(Error::invalid("outcomes must be 0 or 1"));
    }
    Ok(())
}

/// Indices ordered by `(probability, outcome)`; ties are broken by outcome
/// so the ordering does not depend on input order.
fn sorted_order<T: Real>(probs: &[T], outcomes: &[u8]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[a]
            .partial_cmp(&probs[b])
            .unwrap_or(Ordering::Equal)
            .then(outcomes[a].cmp(&outcomes[b]))
    });
    idx
}

fn equal_count_bins(n: usize, k: usize) -> Vec<(usize, usize)> {
    let k = k.min(n).max(1);
    (0..k).map(|b| (b * n / k, (b + 1) * n / k)).collect()
}

/// Estimated calibration index: `100 × mean (ĉ(pᵢ) − pᵢ)²` where `ĉ` is the
/// estimated calibration curve.
pub fn eci<T: Real>(probs: &[T], outcomes: &[u8], method: EciMethod) -> Result<EciEstimate<T>> {
    check_pairs(probs, outcomes)?;
    let n = probs.len();
    if n < MIN_ECI_SAMPLES {
        return Err(Error::invalid(format!(
            "ECI needs at least {MIN_ECI_SAMPLES} observations, got {n}"
        )));
    }
    let positives = outcomes.iter().filter(|&&y| y == 1).count();
    let single_class = positives == 0 || positives == n;
    if single_class {
        log::warn!("ECI computed on single-class outcomes");
    }
    let hundred = T::lit(100.0);
    let nf = T::from_usize_lossy(n);
    let sq_sum = match method {
        EciMethod::Binned(k) => {
            if k == 0 {
                return Err(Error::invalid("ECI needs at least one bin"));
            }
            let order = sorted_order(probs, outcomes);
            let mut acc = T::zero();
            for (lo, hi) in equal_count_bins(n, k) {
                let members = &order[lo..hi];
                let hits = members.iter().filter(|&&i| outcomes[i] == 1).count();
                let curve = T::from_usize_lossy(hits) / T::from_usize_lossy(members.len());
                for &i in members {
                    let dev = curve - probs[i];
                    acc += dev * dev;
                }
            }
            acc
        }
        EciMethod::LogitSmooth => {
            let clip = T::lit(NLL_CLIP);
            let feats: Vec<T> = probs.iter().map(|&p| logit(clamp(p, clip))).collect();
            let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { T::one() } else { feats[i] });
            let batch = LabeledBatch::new(z, outcomes.to_vec())?;
            let init = DVector::from_vec(vec![T::zero(), T::one()]);
            let mut fit = fit_mle(std::slice::from_ref(&batch), &init, T::zero())?;
            if !fit.converged {
                fit = fit_mle(std::slice::from_ref(&batch), &init, T::lit(1e-6))?;
            }
            let (a, b) = (fit.theta[0], fit.theta[1]);
            feats.iter().zip(probs).fold(T::zero(), |acc, (&f, &p)| {
                let dev = sigmoid(a + b * f) - p;
                acc + dev * dev
            })
        }
    };
    Ok(EciEstimate {
        value: hundred * sq_sum / nf,
        single_class,
    })
}

fn clamp<T: Real>(p: T, eps: T) -> T {
    let hi = T::one() - eps;
    if p < eps {
        eps
    } else if p > hi {
        hi
    } else {
        p
    }
}

/// Area under the ROC curve via the Mann–Whitney statistic, ties counted ½.
pub fn auc<T: Real>(probs: &[T], outcomes: &[u8]) -> Result<T> {
    check_pairs(probs, outcomes)?;
    let n1 = outcomes.iter().filter(|&&y| y == 1).count();
    let n0 = outcomes.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::SingleClass("AUC"));
    }
    let order = sorted_order(probs, outcomes);
    // Sum of midranks (doubled to stay integral) of the positives.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j) as u128;
        let pos = order[i..j].iter().filter(|&&k| outcomes[k] == 1).count() as u128;
        rank_sum2 += mid2 * pos;
        i = j;
    }
    let n1u = n1 as u128;
    let u2 = rank_sum2 - n1u * (n1u + 1);
    Ok(T::lit(u2 as f64) / (T::lit(2.0) * T::from_usize_lossy(n1) * T::from_usize_lossy(n0)))
}

/// Per-observation negative log-likelihoods `−log p(yᵢ; pᵢ)`.
pub fn nll_terms<T: Real>(probs: &[T], outcomes: &[u8]) -> Result<Vec<T>> {
    check_pairs(probs, outcomes)?;
    let eps = T::lit(NLL_CLIP);
    Ok(probs
        .iter()
        .zip(outcomes)
        .map(|(&p, &y)| {
            let p = clamp(p, eps);
            if y == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .collect())
}

/// Average negative log-likelihood over all observations.
pub fn cumulative_nll<T: Real>(probs: &[T], outcomes: &[u8]) -> Result<T> {
    let terms = nll_terms(probs, outcomes)?;
    if terms.is_empty() {
        return Err(Error::invalid("average NLL of an empty series"));
    }
    let total = terms.iter().fold(T::zero(), |a, &b| a + b);
    Ok(total / T::from_usize_lossy(terms.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin: usize,
    pub predicted: f64,
    pub observed: f64,
    pub count: usize,
}

/// Equal-count binned calibration curve.
pub fn calibration_curve<T: Real>(probs: &[T], outcomes: &[u8], bins: usize) -> Result<Vec<CurvePoint>> {
    check_pairs(probs, outcomes)?;
    if bins == 0 || probs.is_empty() {
        return Err(Error::invalid("calibration curve needs bins and data"));
    }
    let order = sorted_order(probs, outcomes);
    Ok(equal_count_bins(probs.len(), bins)
        .into_iter()
        .enumerate()
        .map(|(bin, (lo, hi))| {
            let members = &order[lo..hi];
            let count = members.len();
            let predicted = members.iter().map(|&i| probs[i].as_f64()).sum::<f64>() / count as f64;
            let observed = members.iter().filter(|&&i| outcomes[i] == 1).count() as f64 / count as f64;
            CurvePoint {
                bin,
                predicted,
                observed,
                count,
            }
        })
        .collect())
}

/// Metrics over the trailing window ending at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics<T: Real> {
    pub t: usize,
    pub eci: Option<T>,
    pub auc: Option<T>,
    /// Mean NLL of step `t`'s own batch.
    pub nll: Option<T>,
}

/// Windowed ECI and AUC for every step; entries are `None` where the
/// window has too few observations or a single class.
pub fn windowed_metrics<T: Real>(
    probs: &[Vec<T>],
    outcomes: &[Vec<u8>],
    window: usize,
    method: EciMethod,
) -> Result<Vec<StepMetrics<T>>> {
    check_dim("per-step probabilities vs outcomes", probs.len(), outcomes.len())?;
    if window == 0 {
        return Err(Error::invalid("metric window must be >= 1"));
    }
    let mut out = Vec::with_capacity(probs.len());
    for t in 0..probs.len() {
        let lo = (t + 1).saturating_sub(window);
        let p: Vec<T> = probs[lo..=t].iter().flatten().copied().collect();
        let y: Vec<u8> = outcomes[lo..=t].iter().flatten().copied().collect();
        let eci_value = if p.len() >= MIN_ECI_SAMPLES {
            Some(eci(&p, &y, method)?.value)
        } else {
            None
        };
        let auc_value = match auc(&p, &y) {
            Ok(v) => Some(v),
            Err(Error::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        let nll = if probs[t].is_empty() {
            None
        } else {
            Some(cumulative_nll(&probs[t], &outcomes[t])?)
        };
        out.push(StepMetrics {
            t: t + 1,
            eci: eci_value,
            auc: auc_value,
            nll,
        });
    }
    Ok(out)
}

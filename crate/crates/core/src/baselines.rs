//! Reference revisers recorded in the same [`RunHistory`] shape as the filter.

use nalgebra::{DMatrix, DVector};

use crate::engine::{RunHistory, StepRecord};
use crate::error::{check_dim, Result};
use crate::logistic::{fit_mle, LabeledBatch};
use crate::scalar::{sigmoid, Real};

/// Ridge of the cumulative refit, small enough to be negligible once both
/// classes are present.
pub const CUMULATIVE_MLE_RIDGE: f64 = 1e-6;

fn record<T: Real>(t: usize, theta: &DVector<T>, batch: &LabeledBatch<T>) -> StepRecord<T> {
    let d = theta.len();
    StepRecord {
        t,
        probs: (batch.features() * theta).iter().map(|&e| sigmoid(e)).collect(),
        outcomes: batch.outcomes().to_vec(),
        mean: theta.clone(),
        cov: DMatrix::zeros(d, d),
        branch_weights: [T::zero(), T::one()],
    }
}

/// The reviser frozen at `theta` for every step.
pub fn run_locked<T: Real>(theta: &DVector<T>, stream: &[LabeledBatch<T>]) -> Result<RunHistory<T>> {
    let mut steps = Vec::with_capacity(stream.len());
    for (idx, batch) in stream.iter().enumerate() {
        check_dim("locked baseline batch", theta.len(), batch.dim())?;
        steps.push(record(idx + 1, theta, batch));
    }
    Ok(RunHistory {
        steps,
        final_state: None,
    })
}

/// Refits the revision by penalized MLE on all data seen so far before each
/// step, starting from `theta_init`.
pub fn run_cumulative_mle<T: Real>(theta_init: &DVector<T>, stream: &[LabeledBatch<T>]) -> Result<RunHistory<T>> {
    let ridge = T::lit(CUMULATIVE_MLE_RIDGE);
    let mut theta = theta_init.clone();
    let mut steps = Vec::with_capacity(stream.len());
    for (idx, batch) in stream.iter().enumerate() {
        check_dim("cumulative MLE batch", theta.len(), batch.dim())?;
        steps.push(record(idx + 1, &theta, batch));
        let fit = fit_mle(&stream[..=idx], &theta, ridge)?;
        if fit.converged {
            theta = fit.theta;
        } else {
            log::debug!("cumulative MLE did not converge at t = {}; keeping previous fit", idx + 1);
        }
    }
    Ok(RunHistory {
        steps,
        final_state: None,
    })
}

//! Logistic likelihood, its derivatives, the single Newton step used by the
//! filter, damped-Newton maximum likelihood, and the posterior predictive
//! probability under a Gaussian belief.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::belief::{symmetrize, GaussianBelief};
use crate::error::{check_dim, Error, Result};
use crate::scalar::{sigmoid, softplus, Real};

/// Convergence threshold on `‖∇‖∞` for [`fit_mle`].
pub const GRAD_TOL: f64 = 1e-8;
/// Newton iteration budget for [`fit_mle`].
pub const MAX_ITER: usize = 100;
/// Step-halving budget per Newton iteration.
pub const MAX_HALVINGS: usize = 30;
/// Largest `‖Δθ‖∞` of the pending Newton step accepted at convergence.
/// Under separation the gradient vanishes while the step stays near one,
/// so this is what reports the divergence.
pub const STEP_TOL: f64 = 1e-4;

/// One time step's labeled observations: an `n × d` feature matrix and `n`
/// binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<T: Real> {
    z: DMatrix<T>,
    y: Vec<u8>,
}

impl<T: Real> LabeledBatch<T> {
    pub fn new(z: DMatrix<T>, y: Vec<u8>) -> Result<Self> {
        check_dim("batch rows vs outcomes", z.nrows(), y.len())?;
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("outcome must be 0 or 1, got {bad}")));
        }
        Ok(Self { z, y })
    }

    /// Builds a batch from row vectors; `dim` fixes the width when `rows` is empty.
    pub fn from_rows(rows: &[DVector<T>], y: Vec<u8>, dim: usize) -> Result<Self> {
        for r in rows {
            check_dim("batch row", dim, r.len())?;
        }
        let z = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(z, y)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            z: DMatrix::zeros(0, dim),
            y: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn features(&self) -> &DMatrix<T> {
        &self.z
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.y
    }
}

fn y_of<T: Real>(y: u8) -> T {
    if y == 1 {
        T::one()
    } else {
        T::zero()
    }
}

/// `Σᵢ [yᵢ log σ(zᵢᵀθ) + (1 − yᵢ) log(1 − σ(zᵢᵀθ))]`.
pub fn log_likelihood<T: Real>(batch: &LabeledBatch<T>, theta: &DVector<T>) -> Result<T> {
    check_dim("log_likelihood", batch.dim(), theta.len())?;
    let eta = &batch.z * theta;
    Ok(eta
        .iter()
        .zip(&batch.y)
        .fold(T::zero(), |acc, (&e, &y)| acc + y_of::<T>(y) * e - softplus(e)))
}

/// Gradient `Σ (yᵢ − pᵢ) zᵢ` and Hessian `−Σ pᵢ(1 − pᵢ) zᵢzᵢᵀ` of the batch
/// log-likelihood.
pub fn grad_hessian<T: Real>(
    batch: &LabeledBatch<T>,
    theta: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let d = batch.dim();
    check_dim("grad_hessian", d, theta.len())?;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    accumulate_grad_hessian(batch, theta, &mut grad, &mut hess);
    Ok((grad, hess))
}

fn accumulate_grad_hessian<T: Real>(
    batch: &LabeledBatch<T>,
    theta: &DVector<T>,
    grad: &mut DVector<T>,
    hess: &mut DMatrix<T>,
) {
    let d = batch.dim();
    let eta = &batch.z * theta;
    let mut residual = DVector::zeros(batch.len());
    let mut scaled = batch.z.clone();
    for i in 0..batch.len() {
        let p = sigmoid(eta[i]);
        residual[i] = y_of::<T>(batch.y[i]) - p;
        let w = (p * (T::one() - p)).sqrt();
        for j in 0..d {
            scaled[(i, j)] *= w;
        }
    }
    *grad += batch.z.tr_mul(&residual);
    *hess -= scaled.tr_mul(&scaled);
}

/// One Newton step on a concave objective with gradient `grad` and Hessian
/// `hess` at `theta_prev`.
///
/// Returns the new point and the Laplace covariance `(−hess)⁻¹`.
pub fn newton_step<T: Real>(
    theta_prev: &DVector<T>,
    grad: &DVector<T>,
    hess: &DMatrix<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let d = theta_prev.len();
    check_dim("newton_step gradient", d, grad.len())?;
    check_dim("newton_step hessian", d, hess.nrows())?;
    check_dim("newton_step hessian", d, hess.ncols())?;
    let neg = symmetrize(&(-hess));
    let chol =
        Cholesky::new(neg).ok_or(Error::DegenerateHessian("objective Hessian is not negative definite"))?;
    let step = chol.solve(grad);
    let cov = symmetrize(&chol.inverse());
    let theta_new = theta_prev + step;
    if theta_new.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateHessian("non-finite Newton update"));
    }
    Ok((theta_new, cov))
}

/// Result of [`fit_mle`].
#[derive(Debug, Clone, PartialEq)]
pub struct MleResult<T: Real> {
    pub theta: DVector<T>,
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: T,
}

fn grad_tol<T: Real>() -> T {
    // f32 cannot resolve 1e-8 on summed gradients.
    let floor = T::default_epsilon() * T::lit(1e4);
    let tol = T::lit(GRAD_TOL);
    if floor > tol {
        floor
    } else {
        tol
    }
}

fn penalized<T: Real>(data: &[LabeledBatch<T>], theta: &DVector<T>, ridge: T) -> Result<T> {
    let mut total = -T::lit(0.5) * ridge * theta.norm_squared();
    for b in data {
        total += log_likelihood(b, theta)?;
    }
    Ok(total)
}

/// Maximizes `Σ log-likelihood − ½·ridge·‖θ‖²` over the pooled batches with
/// damped Newton iterations.
///
/// Non-convergence (including separation with `ridge = 0`) is reported in the
/// result, not as an error.
pub fn fit_mle<T: Real>(data: &[LabeledBatch<T>], init: &DVector<T>, ridge: T) -> Result<MleResult<T>> {
    let d = init.len();
    for b in data {
        check_dim("fit_mle batch", d, b.dim())?;
    }
    let pooled: usize = data.iter().map(LabeledBatch::len).sum();
    if pooled == 0 {
        return Err(Error::invalid("fit_mle needs at least one observation"));
    }
    if !(ridge >= T::zero()) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let tol = grad_tol::<T>();
    let step_tol = {
        let floor = tol.sqrt();
        let base = T::lit(STEP_TOL);
        if floor > base {
            floor
        } else {
            base
        }
    };
    let half = T::lit(0.5);
    let mut theta = init.clone();
    let mut objective = penalized(data, &theta, ridge)?;
    let mut grad_norm = T::zero();
    for iter in 0..=MAX_ITER {
        let mut grad = -(&theta * ridge);
        let mut hess = DMatrix::identity(d, d) * (-ridge);
        for b in data {
            accumulate_grad_hessian(b, &theta, &mut grad, &mut hess);
        }
        grad_norm = grad.amax();
        let Some(chol) = Cholesky::new(symmetrize(&(-hess))) else {
            // Flat curvature: saturated probabilities under separation.
            return Ok(MleResult {
                theta,
                converged: false,
                iterations: iter,
                final_grad_norm: grad_norm,
            });
        };
        let direction = chol.solve(&grad);
        if grad_norm < tol && direction.amax() < step_tol {
            return Ok(MleResult {
                theta,
                converged: true,
                iterations: iter,
                final_grad_norm: grad_norm,
            });
        }
        if iter == MAX_ITER {
            break;
        }
        // Near the optimum the gain of a Newton step drops below the
        // rounding noise of the summed objective; accept steps within it.
        let slack = T::default_epsilon() * T::lit(64.0) * (T::one() + objective.abs());
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &theta + &direction * scale;
            let value = penalized(data, &candidate, ridge)?;
            if value.is_finite() && value >= objective - slack {
                theta = candidate;
                objective = value;
                accepted = true;
                break;
            }
            scale *= half;
        }
        if !accepted {
            return Ok(MleResult {
                theta,
                converged: false,
                iterations: iter + 1,
                final_grad_norm: grad_norm,
            });
        }
    }
    Ok(MleResult {
        theta,
        converged: false,
        iterations: MAX_ITER,
        final_grad_norm: grad_norm,
    })
}

/// How `E_{θ∼belief}[σ(zᵀθ)]` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PredictiveMethod {
    /// `σ(m / √(1 + π s²/8))` with `m = zᵀμ`, `s² = zᵀΣz`.
    #[default]
    ProbitApprox,
    /// Average of `σ` over `samples` draws from a seeded generator.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Posterior-predictive probability that `y = 1` for features `z`.
pub fn posterior_predictive<T: Real>(
    belief: &GaussianBelief<T>,
    z: &DVector<T>,
    method: PredictiveMethod,
) -> Result<T> {
    check_dim("posterior_predictive", belief.dim(), z.len())?;
    let m = z.dot(belief.mean());
    let s2 = (belief.cov() * z).dot(z);
    let s2 = if s2 > T::zero() { s2 } else { T::zero() };
    Ok(match method {
        PredictiveMethod::ProbitApprox => {
            let kappa = (T::one() + T::pi() * s2 / T::lit(8.0)).sqrt();
            sigmoid(m / kappa)
        }
        PredictiveMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::invalid("Monte Carlo needs at least one sample"));
            }
            // The linear predictor zᵀθ is exactly N(m, s²) under the belief.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = s2.as_f64().sqrt();
            let m = m.as_f64();
            let mut acc = 0.0f64;
            for _ in 0..samples {
                let eps: f64 = StandardNormal.sample(&mut rng);
                acc += sigmoid(m + s * eps);
            }
            T::lit(acc / samples as f64)
        }
    })
}

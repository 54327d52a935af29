//! Gaussian beliefs over revision parameters and the mixture-collapsing
//! primitives used by the switching filter.
//!
//! Every covariance is symmetrized as `(A + Aᵀ)/2` after construction and
//! must admit a Cholesky factorization. A covariance that is not positive
//! definite is reported as an error, never repaired with jitter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{ln_2pi, Real};

/// Symmetry tolerance for covariance matrices.
pub const SYM_TOL: f64 = 1e-10;
/// Tolerance on the sum of mixture weights.
pub const WEIGHT_TOL: f64 = 1e-9;

/// How a two-or-more component Gaussian mixture is reduced to one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CollapseMode {
    /// Weighted average of the component means and of the component
    /// covariances, without the between-component spread term.
    #[default]
    Averaged,
    /// Exact second-moment match: the averaged covariance plus
    /// `Σ_k w_k (μ_k − μ̄)(μ_k − μ̄)ᵀ`.
    FullMoment,
}

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (m + m.transpose()) * half
}

/// Multivariate normal belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
}

impl<T: Real> GaussianBelief<T> {
    /// Builds a belief, symmetrizing `cov` and checking positive definiteness.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::invalid(format!(
                "covariance must be square, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_dim("belief mean vs covariance", cov.nrows(), mean.len())?;
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entries"));
        }
        let cov = symmetrize(&cov);
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("belief covariance"));
        }
        Ok(Self { mean, cov })
    }

    /// Isotropic belief `N(mean, scale·I)`.
    pub fn isotropic(mean: DVector<T>, scale: T) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * scale)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<T>, DMatrix<T>) {
        (self.mean, self.cov)
    }

    pub(crate) fn cholesky(&self) -> Result<Cholesky<T, Dyn>> {
        Cholesky::new(self.cov.clone()).ok_or(Error::NotPositiveDefinite("belief covariance"))
    }

    /// `ln |cov|`.
    pub fn log_det(&self) -> Result<T> {
        Ok(log_det_from_cholesky(&self.cholesky()?))
    }
}

pub(crate) fn log_det_from_cholesky<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let two = T::lit(2.0);
    chol.l_dirty()
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, &v| acc + two * v.ln())
}

/// A belief together with its mixture weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedComponent<T: Real> {
    pub weight: T,
    pub belief: GaussianBelief<T>,
}

impl<T: Real> WeightedComponent<T> {
    pub fn new(weight: T, belief: GaussianBelief<T>) -> Result<Self> {
        if !weight.is_finite() || weight < T::zero() || weight > T::one() + T::lit(WEIGHT_TOL) {
            return Err(Error::invalid(format!(
                "component weight must lie in [0, 1], got {}",
                weight
            )));
        }
        Ok(Self { weight, belief })
    }

    /// Zero-weight components take no part in predictions or collapses.
    pub fn is_inert(&self) -> bool {
        self.weight <= T::zero()
    }
}

/// `ln N(x; mean, cov)` evaluated through a Cholesky factorization.
pub fn gaussian_log_density<T: Real>(x: &DVector<T>, belief: &GaussianBelief<T>) -> Result<T> {
    check_dim("gaussian_log_density", belief.dim(), x.len())?;
    let chol = belief.cholesky()?;
    Ok(log_density_with(x, belief.mean(), &chol))
}

pub(crate) fn log_density_with<T: Real>(
    x: &DVector<T>,
    mean: &DVector<T>,
    chol: &Cholesky<T, Dyn>,
) -> T {
    let d = T::from_usize_lossy(x.len());
    let half = T::lit(0.5);
    let diff = x - mean;
    let white = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a nonzero diagonal");
    -half * d * ln_2pi::<T>() - half * log_det_from_cholesky(chol) - half * white.norm_squared()
}

/// Scales the covariance by `factor ≥ 1`, leaving the mean untouched.
pub fn inflate<T: Real>(belief: &GaussianBelief<T>, factor: T) -> Result<GaussianBelief<T>> {
    if !factor.is_finite() || factor < T::one() {
        return Err(Error::invalid(format!(
            "inflation factor must be >= 1, got {}",
            factor
        )));
    }
    if factor == T::one() {
        return Ok(belief.clone());
    }
    GaussianBelief::new(belief.mean.clone(), &belief.cov * factor)
}

/// Collapses a weighted Gaussian mixture into a single Gaussian.
///
/// Weights are renormalized; zero-weight components are ignored. Both modes
/// return the exact mixture mean.
pub fn collapse_mixture<T: Real>(
    components: &[WeightedComponent<T>],
    mode: CollapseMode,
) -> Result<GaussianBelief<T>> {
    let first = components.first().ok_or(Error::EmptyMixture)?;
    let d = first.belief.dim();
    let mut total = T::zero();
    for c in components {
        check_dim("collapse_mixture", d, c.belief.dim())?;
        if !c.weight.is_finite() || c.weight < T::zero() {
            return Err(Error::ZeroWeights);
        }
        total += c.weight;
    }
    if !(total > T::zero()) || !total.is_finite() {
        return Err(Error::ZeroWeights);
    }
    let active: Vec<_> = components.iter().filter(|c| !c.is_inert()).collect();
    if active.len() == 1 {
        return Ok(active[0].belief.clone());
    }

    let mut mean = DVector::zeros(d);
    for c in &active {
        mean += &c.belief.mean * (c.weight / total);
    }
    let mut cov = DMatrix::zeros(d, d);
    for c in &active {
        let w = c.weight / total;
        cov += &c.belief.cov * w;
        if mode == CollapseMode::FullMoment {
            let dev = &c.belief.mean - &mean;
            cov += (&dev * dev.transpose()) * w;
        }
    }
    GaussianBelief::new(mean, cov)
}

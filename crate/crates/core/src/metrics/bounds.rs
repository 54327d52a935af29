use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::metrics::regret::ShiftTimes;
use crate::scalar::Real;

/// Largest `|τ|` for which [`TauPrimeSearch::Minimize`] enumerates subsequences.
pub const MAX_TAU_FOR_SEARCH: usize = 12;

/// Everything the bound formulas consume.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs<T: Real> {
    pub d: usize,
    pub n: usize,
    pub t_steps: usize,
    /// Curvature bound of the per-observation log-likelihood.
    pub c: T,
    /// Feature second-moment bound.
    pub r: T,
    pub alpha: T,
    pub delta2: T,
    pub tau: ShiftTimes,
    /// Subsequence of `tau`; `None` means `tau` itself.
    pub tau_prime: Option<ShiftTimes>,
    pub theta_init: DVector<T>,
    pub sigma_init: DMatrix<T>,
    /// `θ̃` for each segment of `tau`.
    pub oracle_thetas: Vec<DVector<T>>,
    /// Whole-stream fit.
    pub oracle_locked: Option<DVector<T>>,
}

impl<T: Real> BoundInputs<T> {
    pub fn trace_sigma(&self) -> T {
        self.sigma_init.trace()
    }

    fn check(&self) -> Result<()> {
        check_dim("theta_init", self.d, self.theta_init.len())?;
        check_dim("sigma_init rows", self.d, self.sigma_init.nrows())?;
        check_dim("sigma_init cols", self.d, self.sigma_init.ncols())?;
        check_dim("shift-time horizon", self.t_steps, self.tau.horizon())?;
        if self.n == 0 || self.t_steps == 0 || self.d == 0 {
            return Err(Error::invalid("bound inputs need positive d, n and T"));
        }
        if !(self.c > T::zero()) || !(self.r >= T::zero()) {
            return Err(Error::invalid("bound inputs need c > 0 and R >= 0"));
        }
        if !(self.alpha >= T::zero() && self.alpha < T::one()) || !(self.delta2 >= T::zero()) {
            return Err(Error::invalid("bound inputs need alpha in [0, 1) and delta2 >= 0"));
        }
        Ok(())
    }

    /// `c·n·R²`, shared by every formula.
    fn cnr2(&self) -> T {
        self.c * T::from_usize_lossy(self.n) * self.r * self.r
    }

    fn check_oracles(&self) -> Result<()> {
        check_dim("oracle thetas vs segments", self.tau.len(), self.oracle_thetas.len())?;
        for th in &self.oracle_thetas {
            check_dim("oracle theta", self.d, th.len())?;
        }
        Ok(())
    }
}

fn precision_quad<T: Real>(chol: &Cholesky<T, nalgebra::Dyn>, v: &DVector<T>) -> T {
    v.dot(&chol.solve(v))
}

fn sigma_cholesky<T: Real>(inp: &BoundInputs<T>) -> Result<Cholesky<T, nalgebra::Dyn>> {
    Cholesky::new(inp.sigma_init.clone()).ok_or(Error::NotPositiveDefinite("sigma_init"))
}

/// Type I regret bound for MarBLR, on the cumulative NLL scale.
pub fn type1_bound_marblr<T: Real>(inp: &BoundInputs<T>) -> Result<T> {
    inp.check()?;
    let d = T::from_usize_lossy(inp.d);
    let tf = T::from_usize_lossy(inp.t_steps);
    let half = T::lit(0.5);
    let core = inp.cnr2() * tf * inp.trace_sigma() / d;
    let first = half * d * core.ln_1p();
    let second = if inp.alpha == T::zero() {
        T::zero()
    } else {
        half * d * inp.alpha * (tf - T::one()) * (inp.delta2 * core * half).ln_1p()
    };
    Ok(first + second)
}

/// Type II τ-regret bound for BLR, on the cumulative NLL scale.
pub fn type2_bound_blr<T: Real>(inp: &BoundInputs<T>) -> Result<T> {
    inp.check()?;
    inp.check_oracles()?;
    let locked = inp
        .oracle_locked
        .as_ref()
        .ok_or(Error::invalid("BLR Type II bound needs the whole-stream oracle"))?;
    check_dim("locked oracle", inp.d, locked.len())?;
    let chol = sigma_cholesky(inp)?;
    let half = T::lit(0.5);
    let d = T::from_usize_lossy(inp.d);
    let tf = T::from_usize_lossy(inp.t_steps);
    let first = half * precision_quad(&chol, &(locked - &inp.theta_init));
    let second = half * d * ((d + inp.cnr2() * tf * inp.trace_sigma()) / d).ln();
    let mut drift = T::zero();
    for ((start, end), th) in inp.tau.segments().into_iter().zip(&inp.oracle_thetas) {
        drift += T::from_usize_lossy(end - start) * (locked - th).norm_squared();
    }
    Ok(first + second + half * inp.cnr2() * drift)
}

/// `ln p₀(τ′)` under independent Bernoulli(α) switches after `W₁ = 1`.
pub fn log_prior_shift_times<T: Real>(tau_prime: &ShiftTimes, alpha: T) -> Result<T> {
    let switches = tau_prime.len() - 1;
    let stays = tau_prime.horizon() - tau_prime.len();
    let term = |count: usize, p: T| -> Result<T> {
        if count == 0 {
            Ok(T::zero())
        } else if p > T::zero() {
            Ok(T::from_usize_lossy(count) * p.ln())
        } else {
            Err(Error::invalid("shift times have zero prior probability"))
        }
    };
    Ok(term(switches, alpha)? + term(stays, T::one() - alpha)?)
}

/// How [`type2_bound_marblr`] chooses `τ′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauPrimeSearch {
    /// Use `inp.tau_prime` (or `tau` when absent).
    #[default]
    Given,
    /// Minimize over every subsequence of `tau` containing 1, when
    /// `|tau| ≤ MAX_TAU_FOR_SEARCH`; otherwise behaves like `Given`.
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Type2MarBlrBound<T: Real> {
    pub value: T,
    pub tau_prime: ShiftTimes,
}

fn marblr_bound_for<T: Real>(
    inp: &BoundInputs<T>,
    chol: &Cholesky<T, nalgebra::Dyn>,
    tau_prime: &ShiftTimes,
) -> Result<T> {
    if !tau_prime.is_subsequence_of(&inp.tau) {
        return Err(Error::invalid("tau_prime must be a subsequence of tau"));
    }
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let d = T::from_usize_lossy(inp.d);
    let inv_delta2 = T::one() / inp.delta2;
    let slope = inp.cnr2() * inp.trace_sigma() / d;
    let tau = inp.tau.as_slice();
    let tp = tau_prime.as_slice();
    let theta_at = |time: usize| -> &DVector<T> {
        let j = tau.binary_search(&time).expect("tau_prime is a subsequence of tau");
        &inp.oracle_thetas[j]
    };
    let next = |k: usize| tp.get(k + 1).copied().unwrap_or(inp.t_steps + 1);

    let first = half * precision_quad(chol, &(theta_at(tp[0]) - &inp.theta_init));
    let second = half * d * (T::one() + inv_delta2 + slope * T::from_usize_lossy(next(0) - tp[0])).ln();
    let mut switches = T::zero();
    for k in 1..tp.len() {
        let jump = theta_at(tp[k]) - theta_at(tp[k - 1]);
        switches += inv_delta2 * precision_quad(chol, &jump)
            + d * (two * inv_delta2 + slope * T::from_usize_lossy(next(k) - tp[k])).ln();
    }
    let prior = -log_prior_shift_times(tau_prime, inp.alpha)?;
    let delta_term = T::from_usize_lossy(tp.len() - 1) * d * half * inp.delta2.ln();
    let mut drift = T::zero();
    for ((start, end), th) in inp.tau.segments().into_iter().zip(&inp.oracle_thetas) {
        let k = tp.partition_point(|&s| s <= start) - 1;
        drift += T::from_usize_lossy(end - start) * (theta_at(tp[k]) - th).norm_squared();
    }
    Ok(first + second + half * switches + prior + delta_term + half * inp.cnr2() * drift)
}

/// Type II τ-regret bound for MarBLR, on the cumulative NLL scale.
pub fn type2_bound_marblr<T: Real>(inp: &BoundInputs<T>, search: TauPrimeSearch) -> Result<Type2MarBlrBound<T>> {
    inp.check()?;
    inp.check_oracles()?;
    if !(inp.delta2 > T::zero()) {
        return Err(Error::invalid("MarBLR Type II bound needs delta2 > 0"));
    }
    let chol = sigma_cholesky(inp)?;
    let given = inp.tau_prime.clone().unwrap_or_else(|| inp.tau.clone());
    if search == TauPrimeSearch::Given || inp.tau.len() > MAX_TAU_FOR_SEARCH {
        let value = marblr_bound_for(inp, &chol, &given)?;
        return Ok(Type2MarBlrBound { value, tau_prime: given });
    }
    let rest = &inp.tau.as_slice()[1..];
    let mut best: Option<Type2MarBlrBound<T>> = None;
    for mask in 0u32..(1u32 << rest.len()) {
        let mut times = vec![1];
        times.extend(rest.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &t)| t));
        let candidate = ShiftTimes::new(times, inp.t_steps)?;
        let value = match marblr_bound_for(inp, &chol, &candidate) {
            Ok(v) => v,
            // Zero prior mass under α = 0.
            Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(Type2MarBlrBound {
                value,
                tau_prime: candidate,
            });
        }
    }
    best.ok_or(Error::invalid("no subsequence of tau has positive prior probability"))
}

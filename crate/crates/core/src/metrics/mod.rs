//! Calibration and discrimination metrics, empirical regrets against the
//! locked and oracle revisers, and the theoretical regret bounds.

mod bounds;
mod calibration;
mod regret;

pub use bounds::{
    log_prior_shift_times, type1_bound_marblr, type2_bound_blr, type2_bound_marblr, BoundInputs, TauPrimeSearch,
    Type2MarBlrBound,
};
pub use calibration::{
    auc, calibration_curve, cumulative_nll, eci, nll_terms, windowed_metrics, CurvePoint, EciEstimate, EciMethod,
    StepMetrics, MIN_ECI_SAMPLES, NLL_CLIP,
};
pub use regret::{
    compute_r, fit_oracles, locked_probabilities, type1_regret, type2_regret, OracleFit, ShiftTimes, Type2Regret,
    ORACLE_FALLBACK_RIDGE,
};

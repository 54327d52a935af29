//! Online Bayesian logistic revision of a deployed risk model.
//!
//! A revision maps the original model's score (and optionally covariates)
//! to a corrected probability through a logistic model whose parameters are
//! tracked online. [`engine`] runs the filter under either a static prior
//! (BLR) or a Markov-switching prior that lets the parameters jump at each
//! step (MarBLR). [`simulator`] produces drifting streams, [`metrics`]
//! scores runs and evaluates the regret bounds, and [`io`] reads and writes
//! the plain-text formats used by the `marblr` binary.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar for the common case.

pub mod baselines;
pub mod belief;
pub mod engine;
pub mod error;
pub mod io;
pub mod logistic;
pub mod metrics;
pub mod report;
pub mod revision;
pub mod scalar;
pub mod simulator;

pub use belief::{collapse_mixture, gaussian_log_density, inflate, CollapseMode, GaussianBelief, WeightedComponent};
pub use engine::{
    init, predict_proba, predict_step, run, run_stream, update_step, EngineState, MarBlrConfig, PredictiveMixture,
    RunHistory, StepRecord,
};
pub use error::{Error, Result};
pub use logistic::{fit_mle, grad_hessian, log_likelihood, newton_step, posterior_predictive, LabeledBatch, MleResult, PredictiveMethod};
pub use report::{regret_report, RegretReport};
pub use revision::{build_features, prepare_stream, FeatureMap, RefitManager, RefitStrategy, RevisionVariant};
pub use scalar::{logit, sigmoid, softplus, Real};

pub type GaussianBelief64 = GaussianBelief<f64>;
pub type GaussianBelief32 = GaussianBelief<f32>;
pub type MarBlrConfig64 = MarBlrConfig<f64>;
pub type MarBlrConfig32 = MarBlrConfig<f32>;
pub type EngineState64 = EngineState<f64>;
pub type EngineState32 = EngineState<f32>;
pub type LabeledBatch64 = LabeledBatch<f64>;
pub type LabeledBatch32 = LabeledBatch<f32>;
pub type RunHistory64 = RunHistory<f64>;
pub type RunHistory32 = RunHistory<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMap32 = FeatureMap<f32>;

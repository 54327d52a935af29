//! Seeded synthetic streams with known parameter drift.
//!
//! Every scenario draws patient variables `x ~ N(0, I)` and outcomes from a
//! logistic model `logit Pr(y = 1) = β₀(t) + β(t)ᵀx`. The original model is
//! the `t = 0` member of that family, so its miscalibration at time `t` is
//! exactly the drift accumulated by then.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ShiftTimes;
use crate::scalar::sigmoid;

/// Coefficients of the original model, cycled when more variables are asked for.
pub const BASE_COEFFICIENTS: [f64; 10] = [1.0, -0.8, 0.6, -0.5, 0.4, 0.3, -0.3, 0.2, 0.1, -0.1];

const LABEL_NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    InitialShift,
    Cyclical,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Fixed model recalibrated in a population with two subgroups.
    One,
    /// Fixed model revised with the score and patient variables.
    Two(ShiftKind),
    /// Original model ensembled with a continually refitted one.
    Three(ShiftKind),
}

impl Scenario {
    pub fn shift_kind(&self) -> ShiftKind {
        match *self {
            Scenario::One => ShiftKind::InitialShift,
            Scenario::Two(k) | Scenario::Three(k) => k,
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two(_) => 2,
            Scenario::Three(_) => 3,
        }
    }
}

/// Steps `start ..= end` whose refit labels are replaced by fair coin flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionBurst {
    pub start: usize,
    pub end: usize,
}

/// Drift magnitudes. All angles in degrees, all shifts on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    /// Intercept of the original model.
    pub base_intercept: f64,
    /// Multiplier on [`BASE_COEFFICIENTS`].
    pub coefficient_scale: f64,
    /// Intercept jump applied from `t = 1` (initial shift).
    pub initial_shift: f64,
    pub cyclical_amplitude: f64,
    pub cyclical_period: f64,
    /// Rotation of `β` away from the original direction reached at `t = T`.
    pub decay_angle_deg: f64,
    /// Fraction of `‖β‖` lost by `t = T`.
    pub decay_shrink: f64,
    /// Number of shift times reported for decay streams.
    pub decay_tau_grid: usize,
    /// Intercept shifts of subgroups A and B (scenario 1).
    pub group_shift: (f64, f64),
    pub corruption: Option<CorruptionBurst>,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            base_intercept: -1.0,
            coefficient_scale: 1.0,
            initial_shift: 1.0,
            cyclical_amplitude: 1.0,
            cyclical_period: 40.0,
            decay_angle_deg: 60.0,
            decay_shrink: 0.5,
            decay_tau_grid: 10,
            group_shift: (1.5, -0.5),
            corruption: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub n: usize,
    pub d_x: usize,
    pub seed: u64,
    /// Population shares of subgroups A and B.
    pub group_prevalence: (f64, f64),
    pub drift: DriftParams,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, t_steps: usize, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            t_steps,
            n,
            d_x: 10,
            seed,
            group_prevalence: (0.2, 0.8),
            drift: DriftParams::default(),
        }
    }

    /// Scenario 3 with a label-noise burst over the `window` refit labels
    /// preceding `t = 100`.
    pub fn with_refit_corruption(mut self, window: usize) -> Self {
        if self.t_steps >= 100 && window >= 1 {
            self.drift.corruption = Some(CorruptionBurst {
                start: 100usize.saturating_sub(window).max(1),
                end: 99,
            });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 || self.n == 0 {
            return Err(Error::invalid("T and n must be >= 1"));
        }
        if self.d_x == 0 {
            return Err(Error::invalid("d_x must be >= 1"));
        }
        let (a, b) = self.group_prevalence;
        if !(a > 0.0 && b > 0.0) || (a + b - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("group prevalences must be positive and sum to 1"));
        }
        let p = &self.drift;
        if !(p.cyclical_period > 0.0) {
            return Err(Error::invalid("cyclical period must be > 0"));
        }
        if p.decay_tau_grid == 0 {
            return Err(Error::invalid("decay tau grid must be >= 1"));
        }
        if !(0.0..1.0).contains(&p.decay_shrink) {
            return Err(Error::invalid("decay shrink must lie in [0, 1)"));
        }
        let finite = [
            p.base_intercept,
            p.coefficient_scale,
            p.initial_shift,
            p.cyclical_amplitude,
            p.decay_angle_deg,
            p.group_shift.0,
            p.group_shift.1,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("drift parameters must be finite"));
        }
        if let Some(c) = p.corruption {
            if c.start == 0 || c.start > c.end {
                return Err(Error::invalid("corruption burst must satisfy 1 <= start <= end"));
            }
        }
        Ok(())
    }

    /// Coefficients of the original (`t = 0`) model, intercept excluded.
    pub fn base_coefficients(&self) -> DVector<f64> {
        DVector::from_fn(self.d_x, |j, _| {
            BASE_COEFFICIENTS[j % BASE_COEFFICIENTS.len()] * self.drift.coefficient_scale
        })
    }

    /// True `(β₀(t), β(t))` for subgroup-free scenarios; `t = 0` is the original model.
    pub fn true_parameters(&self, t: usize) -> (f64, DVector<f64>) {
        let p = &self.drift;
        let beta = self.base_coefficients();
        if t == 0 {
            return (p.base_intercept, beta);
        }
        let frac = t as f64 / self.t_steps as f64;
        match self.scenario.shift_kind() {
            ShiftKind::InitialShift => {
                let shift = if self.scenario == Scenario::One { 0.0 } else { p.initial_shift };
                (p.base_intercept + shift, beta)
            }
            ShiftKind::Cyclical => (
                p.base_intercept + p.cyclical_amplitude * (2.0 * PI * t as f64 / p.cyclical_period).sin(),
                beta,
            ),
            ShiftKind::Decay => {
                let norm = beta.norm();
                let dir = &beta / norm;
                let ortho = orthogonal_direction(&dir);
                let phi = p.decay_angle_deg.to_radians() * frac;
                let scale = norm * (1.0 - p.decay_shrink * frac);
                (p.base_intercept, (dir * phi.cos() + ortho * phi.sin()) * scale)
            }
        }
    }
}

/// Fixed unit vector orthogonal to `dir`, built from alternating signs.
fn orthogonal_direction(dir: &DVector<f64>) -> DVector<f64> {
    let d = dir.len();
    if d == 1 {
        // A single variable cannot rotate; flip toward zero instead.
        return -dir.clone();
    }
    let mut v = DVector::from_fn(d, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + j as f64));
    v -= dir * dir.dot(&v);
    if v.norm() < 1e-12 {
        v = DVector::from_fn(d, |j, _| if j == 0 { dir[1] } else if j == 1 { -dir[0] } else { 0.0 });
    }
    let n = v.norm();
    v / n
}

/// Observed data for one time step, as stored in stream files.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub t: usize,
    /// `n × d_x` patient variables.
    pub x: DMatrix<f64>,
    pub group: Option<Vec<usize>>,
    /// Original model's probability.
    pub score: Vec<f64>,
    pub y: Vec<u8>,
    /// Outcomes as seen by the refitting pipeline; equal to `y` unless corrupted.
    pub refit_y: Vec<u8>,
}

impl StreamBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A generated batch together with the generating probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub observed: StreamBatch,
    pub true_prob: Vec<f64>,
}

/// Generates the `T` batches of a scenario; a pure function of `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<SimBatch>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ LABEL_NOISE_STREAM);
    let (b0_orig, beta_orig) = spec.true_parameters(0);
    let two_groups = spec.scenario == Scenario::One;
    let mut out = Vec::with_capacity(spec.t_steps);
    for t in 1..=spec.t_steps {
        let (b0, beta) = spec.true_parameters(t);
        let x = DMatrix::from_fn(spec.n, spec.d_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let groups: Option<Vec<usize>> = two_groups.then(|| {
            (0..spec.n)
                .map(|_| if rng.random::<f64>() < spec.group_prevalence.0 { 0 } else { 1 })
                .collect()
        });
        let mut true_prob = Vec::with_capacity(spec.n);
        let mut score = Vec::with_capacity(spec.n);
        let mut y = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let row = x.row(i);
            let base = row.dot(&beta_orig.transpose());
            let mut eta = b0 + row.dot(&beta.transpose());
            if let Some(g) = &groups {
                eta += if g[i] == 0 { spec.drift.group_shift.0 } else { spec.drift.group_shift.1 };
            }
            let p = sigmoid(eta);
            true_prob.push(p);
            score.push(sigmoid(b0_orig + base));
            y.push(u8::from(rng.random::<f64>() < p));
        }
        let corrupted = spec
            .drift
            .corruption
            .is_some_and(|c| t >= c.start && t <= c.end);
        let refit_y = if corrupted {
            (0..spec.n).map(|_| u8::from(noise_rng.random::<f64>() < 0.5)).collect()
        } else {
            y.clone()
        };
        out.push(SimBatch {
            observed: StreamBatch {
                t,
                x,
                group: groups,
                score,
                y,
                refit_y,
            },
            true_prob,
        });
    }
    Ok(out)
}

/// The generator's true parameter-change times.
pub fn oracle_tau(spec: &ScenarioSpec) -> Result<ShiftTimes> {
    spec.validate()?;
    let t_max = spec.t_steps;
    let times: Vec<usize> = match spec.scenario.shift_kind() {
        ShiftKind::InitialShift => vec![1],
        ShiftKind::Cyclical => {
            let step = ((spec.drift.cyclical_period / 4.0).round() as usize).max(1);
            (1..=t_max).step_by(step).collect()
        }
        ShiftKind::Decay => {
            let grid = spec.drift.decay_tau_grid.min(t_max);
            let mut v: Vec<usize> = (0..grid).map(|k| 1 + k * t_max / grid).collect();
            v.dedup();
            v
        }
    };
    ShiftTimes::new(times, t_max)
}

/// Observed halves of a generated stream.
pub fn observed(batches: &[SimBatch]) -> Vec<StreamBatch> {
    batches.iter().map(|b| b.observed.clone()).collect()
}

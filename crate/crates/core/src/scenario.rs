//! Scenario abstraction and the smoothed failure posterior.
//!
//! A scenario couples a disturbance prior `p(x)`, deterministic closed-loop dynamics driven by
//! `x`, and a scalar distance to failure. Failure conditioning is relaxed by replacing the
//! indicator of failure with a Gaussian on the clipped distance:
//!
//! ```text
//! log pi(x) = log N(max(dist(x), 0) | 0, epsilon) + log p(x)
//! ```
//!
//! where `epsilon` is a variance in the scenario's native distance units.

use std::f64::consts::PI;
use std::fmt::Debug;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AdError, GradientVector, Real, Tape};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Zero-mean Gaussian with independent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    std: Vec<f64>,
    norm: f64,
}

impl DiagonalGaussian {
    pub fn new(std: Vec<f64>) -> Self {
        assert!(
            std.iter().all(|s| *s > 0.0 && s.is_finite()),
            "standard deviations must be positive"
        );
        let norm = -std.iter().map(|s| s.ln() + 0.5 * LN_2PI).sum::<f64>();
        Self { std, norm }
    }

    /// Per-step standard deviations repeated over `steps` steps.
    pub fn repeated(step_std: &[f64], steps: usize) -> Self {
        Self::new(
            step_std
                .iter()
                .copied()
                .cycle()
                .take(step_std.len() * steps)
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn log_density<R: Real>(&self, x: &[R]) -> R {
        assert_eq!(x.len(), self.std.len(), "dimension mismatch");
        let quad = x
            .iter()
            .zip(&self.std)
            .map(|(&xi, &s)| (xi / s).square())
            .reduce(|a, b| a + b)
            .unwrap_or(R::constant(0.0));
        quad * -0.5 + self.norm
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<f64> {
        self.std
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Log density of a univariate normal with mean zero and variance `variance`.
pub fn log_normal<R: Real>(x: R, variance: f64) -> R {
    x.square() * (-0.5 / variance) - 0.5 * (2.0 * PI * variance).ln()
}

/// Variance of the Gaussian that relaxes the failure indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    epsilon: f64,
}

impl SmoothingConfig {
    pub const DEFAULT_EPSILON: f64 = 0.05;

    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon.is_finite() {
            Ok(Self { epsilon })
        } else {
            Err(Error::InvalidConfig(format!(
                "smoothing epsilon must be positive and finite, got {epsilon}"
            )))
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Result of advancing a scenario by one step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome<R> {
    /// Candidate distance to failure observed at this step, if any.
    pub margin: Option<R>,
    /// The episode has ended (failure, touchdown, ...).
    pub done: bool,
}

/// Axis labels and bounds for trajectory plots.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotAxes {
    pub x_label: &'static str,
    pub y_label: &'static str,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

/// A sequential system under test plus its disturbance model and failure distance.
///
/// Dynamics are written once against [`Real`], so the same code runs on plain floats and on
/// a recording tape. Implementations must be deterministic: equal disturbances give
/// bitwise-equal rollouts.
pub trait Scenario: Send + Sync {
    type State<R: Real>: Clone + Debug;

    fn name(&self) -> &str;

    /// Number of steps `T` in a full-length rollout.
    fn horizon(&self) -> usize;

    /// Disturbance values consumed per step, `k`.
    fn step_dim(&self) -> usize;

    /// Total disturbance dimension `D = T * k`.
    fn dimension(&self) -> usize {
        self.horizon() * self.step_dim()
    }

    /// Disturbance prior over all `D` coordinates.
    fn prior(&self) -> &DiagonalGaussian;

    fn initial_state<R: Real>(&self) -> Self::State<R>;

    /// Distance to failure of the initial state.
    fn initial_margin<R: Real>(&self, state: &Self::State<R>) -> R;

    /// Advances `state` by one step using this step's `k` disturbances.
    fn step<R: Real>(&self, state: &mut Self::State<R>, t: usize, noise: &[R]) -> StepOutcome<R>;

    /// Plain-float snapshot of a state, stored in [`Rollout::states`].
    fn snapshot<R: Real>(&self, state: &Self::State<R>) -> Vec<f64>;

    /// Two plot coordinates for one snapshot.
    fn plot_point(&self, snapshot: &[f64]) -> (f64, f64);

    fn plot_axes(&self) -> PlotAxes;

    /// Low-dimensional descriptor of a failure, normalized to the unit square.
    fn project(&self, rollout: &Rollout) -> [f64; 2];

    /// Smoothing variance tuned for this scenario's distance units.
    fn default_epsilon(&self) -> f64 {
        SmoothingConfig::DEFAULT_EPSILON
    }
}

/// Outcome of simulating one disturbance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Snapshots after each executed step.
    pub states: Vec<Vec<f64>>,
    /// Clipped distance to failure, zero iff the rollout failed.
    pub distance: f64,
    pub log_prior: f64,
    pub failed: bool,
    pub steps_executed: usize,
}

/// Distance-to-failure trace of a generic rollout.
#[derive(Debug, Clone)]
pub struct Trace<R> {
    /// Minimum margin, not clipped.
    pub raw_distance: R,
    pub states: Vec<Vec<f64>>,
    pub steps: usize,
}

/// Runs the scenario on disturbances `x`, stopping early once the episode ends.
pub fn simulate<S: Scenario + ?Sized, R: Real>(
    scenario: &S,
    x: &[R],
    record_states: bool,
) -> Trace<R> {
    assert_eq!(
        x.len(),
        scenario.dimension(),
        "disturbance dimension mismatch"
    );
    let k = scenario.step_dim();
    let mut state = scenario.initial_state::<R>();
    let mut distance = scenario.initial_margin(&state);
    let mut states = Vec::new();
    let mut steps = 0;
    for t in 0..scenario.horizon() {
        let out = scenario.step(&mut state, t, &x[t * k..(t + 1) * k]);
        steps = t + 1;
        if let Some(m) = out.margin {
            distance = distance.min(m);
        }
        if record_states {
            states.push(scenario.snapshot(&state));
        }
        if out.done {
            break;
        }
    }
    Trace {
        raw_distance: distance,
        states,
        steps,
    }
}

/// Clips a distance at zero; failures map to exactly zero.
pub fn clip_distance<R: Real>(raw: R) -> R {
    raw.max(R::constant(0.0))
}

pub fn rollout<S: Scenario + ?Sized>(scenario: &S, x: &[f64]) -> Rollout {
    let trace = simulate(scenario, x, true);
    let distance = clip_distance(trace.raw_distance);
    Rollout {
        states: trace.states,
        distance,
        log_prior: scenario.prior().log_density(x),
        failed: distance == 0.0,
        steps_executed: trace.steps,
    }
}

/// `max(distance, 0)` of a rollout.
pub fn clipped_distance(r: &Rollout) -> f64 {
    r.distance.max(0.0)
}

pub fn is_failure<S: Scenario + ?Sized>(scenario: &S, x: &[f64]) -> bool {
    clip_distance(simulate(scenario, x, false).raw_distance) == 0.0
}

fn check_dim<S: Scenario + ?Sized>(scenario: &S, x: &[f64]) -> Result<()> {
    if x.len() == scenario.dimension() {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: scenario.dimension(),
            got: x.len(),
        })
    }
}

/// Smoothed failure log-posterior (unnormalized) at `x`.
pub fn smoothed_log_posterior<S: Scenario + ?Sized>(
    scenario: &S,
    cfg: &SmoothingConfig,
    x: &[f64],
) -> f64 {
    let trace = simulate(scenario, x, false);
    log_normal(clip_distance(trace.raw_distance), cfg.epsilon()) + scenario.prior().log_density(x)
}

/// Smoothed log-posterior and its gradient, recorded through the full rollout.
pub fn log_posterior_and_grad<S: Scenario + ?Sized>(
    scenario: &S,
    cfg: &SmoothingConfig,
    x: &[f64],
) -> Result<(f64, GradientVector)> {
    check_dim(scenario, x)?;
    let tape = Tape::with_capacity(1024);
    let inputs = tape.inputs(x);
    let trace = simulate(scenario, &inputs, false);
    let value = log_normal(clip_distance(trace.raw_distance), cfg.epsilon())
        + scenario.prior().log_density(&inputs);
    let grad = tape.gradient(value, &inputs)?;
    Ok((value.value(), grad))
}

pub fn grad_log_posterior<S: Scenario + ?Sized>(
    scenario: &S,
    cfg: &SmoothingConfig,
    x: &[f64],
) -> Result<GradientVector> {
    log_posterior_and_grad(scenario, cfg, x).map(|(_, g)| g)
}

impl From<AdError> for Error {
    fn from(e: AdError) -> Self {
        Error::Autodiff(e)
    }
}

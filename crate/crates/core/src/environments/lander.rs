//! Partially observed planar lander with an EKF in the loop.
//!
//! True state `(x, y, theta, vx, vy, omega)`. The lander sees noisy angular rate, horizontal
//! velocity and a range along its body axis (`y / cos theta`); an EKF tracks the state and the
//! controller acts on the belief mean. The disturbances are the observation noises, three per
//! step. A touchdown faster than the hard-landing speed is a failure.

use crate::autodiff::Real;
use crate::environments::ekf::{self, EkfBelief, Matrix, Vector};
use crate::error::Result;
use crate::scenario::{DiagonalGaussian, PlotAxes, Rollout, Scenario, StepOutcome};

pub type State<R> = Vector<R, 6>;

const X: usize = 0;
const Y: usize = 1;
const THETA: usize = 2;
const VX: usize = 3;
const VY: usize = 4;
const OMEGA: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct LanderParams {
    pub gravity: f64,
    pub mass: f64,
    pub inertia: f64,
    /// Main engine limit, N.
    pub max_thrust: f64,
    /// Side thruster limit, N.
    pub max_side_force: f64,
    /// Lever arm of the side thruster, m.
    pub offset: f64,
    /// Observation noise variances `(omega, vx, range)`.
    pub obs_variance: [f64; 3],
    pub hard_landing_speed: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub initial: [f64; 6],
    /// Diagonal of the initial belief covariance.
    pub initial_cov: [f64; 6],
    /// Added to the predicted covariance every step.
    pub process_noise_floor: f64,
}

impl Default for LanderParams {
    fn default() -> Self {
        Self {
            gravity: 1.62,
            mass: 1.0,
            inertia: 1.0,
            max_thrust: 15.0,
            max_side_force: 2.0,
            offset: 0.5,
            obs_variance: [0.02, 0.1, 1.0],
            hard_landing_speed: 6.0,
            dt: 0.1,
            max_steps: 150,
            initial: [0.0, 50.0, 0.0, 2.0, -10.0, 0.0],
            initial_cov: [1.0, 25.0, 0.01, 1.0, 4.0, 0.01],
            process_noise_floor: 1e-6,
        }
    }
}

/// Main thrust along the body axis and side force across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderAction<R> {
    pub thrust: R,
    pub side: R,
}

/// Descent-rate tracking on the main engine; the side thruster holds an attitude that tilts
/// the main engine against horizontal drift (`theta_des = -(k_x / k_theta) vx`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderExpert {
    /// Vertical speed gain, 1/s.
    pub k_v: f64,
    /// Fraction of altitude commanded as descent rate, 1/s.
    pub descent_ratio: f64,
    /// Slowest commanded descent, m/s.
    pub min_descent: f64,
    pub k_x: f64,
    pub k_theta: f64,
    pub k_omega: f64,
}

impl Default for LanderExpert {
    fn default() -> Self {
        Self {
            k_v: 2.0,
            descent_ratio: 0.25,
            min_descent: 1.0,
            k_x: 0.2,
            k_theta: 4.0,
            k_omega: 4.0,
        }
    }
}

impl LanderExpert {
    pub fn act<R: Real>(&self, s: &State<R>, p: &LanderParams) -> LanderAction<R> {
        let vy_des = -((s[Y] * self.descent_ratio).max(R::constant(self.min_descent)));
        let thrust = ((vy_des - s[VY]) * self.k_v + p.gravity) * p.mass;
        let side = s[VX] * self.k_x + s[THETA] * self.k_theta + s[OMEGA] * self.k_omega;
        LanderAction {
            thrust: thrust.clamp(0.0, p.max_thrust),
            side: side.clamp(-p.max_side_force, p.max_side_force),
        }
    }
}

fn accelerations<R: Real>(theta: R, a: &LanderAction<R>, p: &LanderParams) -> (R, R, R) {
    let (sin, cos) = (theta.sin(), theta.cos());
    let ax = (a.thrust * sin + a.side * cos) / p.mass;
    let ay = (a.thrust * cos - a.side * sin) / p.mass - p.gravity;
    let alpha = -a.side * p.offset / p.inertia;
    (ax, ay, alpha)
}

/// Semi-implicit Euler step of the rigid-body dynamics.
pub fn lander_dynamics<R: Real>(s: &State<R>, a: &LanderAction<R>, p: &LanderParams) -> State<R> {
    let dt = p.dt;
    let (ax, ay, alpha) = accelerations(s[THETA], a, p);
    let vx = s[VX] + ax * dt;
    let vy = s[VY] + ay * dt;
    let omega = s[OMEGA] + alpha * dt;
    [
        s[X] + vx * dt,
        s[Y] + vy * dt,
        s[THETA] + omega * dt,
        vx,
        vy,
        omega,
    ]
}

/// Jacobian of [`lander_dynamics`] with respect to the state, action held fixed.
pub fn dynamics_jacobian<R: Real>(
    s: &State<R>,
    a: &LanderAction<R>,
    p: &LanderParams,
) -> Matrix<R, 6, 6> {
    let dt = p.dt;
    let (sin, cos) = (s[THETA].sin(), s[THETA].cos());
    let dax = (a.thrust * cos - a.side * sin) / p.mass;
    let day = -(a.thrust * sin + a.side * cos) / p.mass;
    let mut f: Matrix<R, 6, 6> = ekf::identity();
    f[X][THETA] = dax * (dt * dt);
    f[X][VX] = R::constant(dt);
    f[Y][THETA] = day * (dt * dt);
    f[Y][VY] = R::constant(dt);
    f[THETA][OMEGA] = R::constant(dt);
    f[VX][THETA] = dax * dt;
    f[VY][THETA] = day * dt;
    f
}

fn body_cos<R: Real>(theta: R) -> R {
    theta.cos().max(R::constant(0.1))
}

/// Noise-free observation `(omega, vx, y / cos theta)`.
pub fn observe<R: Real>(s: &State<R>) -> Vector<R, 3> {
    [s[OMEGA], s[VX], s[Y] / body_cos(s[THETA])]
}

pub fn observation_jacobian<R: Real>(s: &State<R>) -> Matrix<R, 3, 6> {
    let mut h: Matrix<R, 3, 6> = ekf::zeros();
    h[0][OMEGA] = R::constant(1.0);
    h[1][VX] = R::constant(1.0);
    let c = body_cos(s[THETA]);
    h[2][Y] = R::constant(1.0) / c;
    if s[THETA].cos().value() > 0.1 {
        h[2][THETA] = s[Y] * s[THETA].sin() / c.square();
    }
    h
}

/// One filter cycle: predict through the dynamics under `action`, then correct with `z`.
pub fn ekf_step<R: Real>(
    belief: &EkfBelief<R, 6>,
    action: &LanderAction<R>,
    z: &Vector<R, 3>,
    p: &LanderParams,
) -> Result<EkfBelief<R, 6>> {
    let pred = ekf_predict(belief, action, p);
    ekf_update(&pred, z, p)
}

pub fn ekf_predict<R: Real>(
    belief: &EkfBelief<R, 6>,
    action: &LanderAction<R>,
    p: &LanderParams,
) -> EkfBelief<R, 6> {
    let q = ekf::diagonal([p.process_noise_floor; 6]);
    ekf::predict(
        belief,
        lander_dynamics(&belief.mean, action, p),
        &dynamics_jacobian(&belief.mean, action, p),
        &q,
    )
}

pub fn ekf_update<R: Real>(
    pred: &EkfBelief<R, 6>,
    z: &Vector<R, 3>,
    p: &LanderParams,
) -> Result<EkfBelief<R, 6>> {
    let expected = observe(&pred.mean);
    let innovation = std::array::from_fn(|i| z[i] - expected[i]);
    ekf::update(
        pred,
        innovation,
        &observation_jacobian(&pred.mean),
        &ekf::diagonal(p.obs_variance),
    )
}

#[derive(Debug, Clone)]
pub struct Lander {
    params: LanderParams,
    expert: LanderExpert,
    prior: DiagonalGaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct LanderState<R> {
    pub t: usize,
    pub truth: State<R>,
    pub belief: EkfBelief<R, 6>,
}

impl Lander {
    pub fn new(params: LanderParams, expert: LanderExpert) -> Self {
        let std = params.obs_variance.map(f64::sqrt);
        let prior = DiagonalGaussian::repeated(&std, params.max_steps);
        Self {
            params,
            expert,
            prior,
        }
    }

    pub fn params(&self) -> &LanderParams {
        &self.params
    }

    pub fn expert(&self) -> &LanderExpert {
        &self.expert
    }

    /// Touchdown time and speed from consecutive snapshots straddling the ground.
    pub fn touchdown(&self, before: &[f64], after: &[f64]) -> (f64, f64) {
        let (y0, y1) = (before[1 + Y], after[1 + Y]);
        let frac = y0 / (y0 - y1);
        let lerp = |i: usize| before[i] + frac * (after[i] - before[i]);
        let speed = (lerp(1 + VX).powi(2) + lerp(1 + VY).powi(2)).sqrt();
        (lerp(0), speed)
    }

    fn initial_snapshot(&self) -> Vec<f64> {
        self.snapshot(&self.initial_state::<f64>())
    }
}

impl Default for Lander {
    fn default() -> Self {
        Self::new(LanderParams::default(), LanderExpert::default())
    }
}

impl Scenario for Lander {
    type State<R: Real> = LanderState<R>;

    fn name(&self) -> &str {
        "lander"
    }

    fn horizon(&self) -> usize {
        self.params.max_steps
    }

    fn step_dim(&self) -> usize {
        3
    }

    fn prior(&self) -> &DiagonalGaussian {
        &self.prior
    }

    fn initial_state<R: Real>(&self) -> LanderState<R> {
        let truth = self.params.initial.map(R::constant);
        LanderState {
            t: 0,
            truth,
            belief: EkfBelief::new(truth, ekf::diagonal(self.params.initial_cov)),
        }
    }

    /// No touchdown yet: the full hard-landing speed of slack.
    fn initial_margin<R: Real>(&self, _s: &LanderState<R>) -> R {
        R::constant(self.params.hard_landing_speed)
    }

    fn step<R: Real>(&self, s: &mut LanderState<R>, _t: usize, noise: &[R]) -> StepOutcome<R> {
        let p = &self.params;
        let action = self.expert.act(&s.belief.mean, p);
        let before = s.truth;
        s.truth = lander_dynamics(&before, &action, p);
        s.t += 1;

        let clean = observe(&s.truth);
        let z = [
            clean[0] + noise[0],
            clean[1] + noise[1],
            clean[2] + noise[2],
        ];
        let pred = ekf_predict(&s.belief, &action, p);
        // The observation noise is strictly positive, so the innovation covariance is always
        // invertible; keep the prediction if rounding ever says otherwise.
        s.belief = ekf_update(&pred, &z, p).unwrap_or(pred);

        if s.truth[Y].value() > 0.0 {
            return StepOutcome {
                margin: None,
                done: false,
            };
        }
        // Interpolate to the ground crossing to soften the step-count discontinuity.
        let frac = before[Y] / (before[Y] - s.truth[Y]);
        let vx = before[VX] + (s.truth[VX] - before[VX]) * frac;
        let vy = before[VY] + (s.truth[VY] - before[VY]) * frac;
        let speed = (vx.square() + vy.square()).sqrt();
        StepOutcome {
            margin: Some(R::constant(p.hard_landing_speed) - speed),
            done: true,
        }
    }

    /// `[time, true state (6), belief mean (6), belief covariance (36, row-major)]`.
    fn snapshot<R: Real>(&self, s: &LanderState<R>) -> Vec<f64> {
        let mut out = Vec::with_capacity(49);
        out.push(s.t as f64 * self.params.dt);
        out.extend(s.truth.iter().map(|v| v.value()));
        out.extend(s.belief.mean.iter().map(|v| v.value()));
        out.extend(s.belief.cov.iter().flatten().map(|v| v.value()));
        out
    }

    fn plot_point(&self, snapshot: &[f64]) -> (f64, f64) {
        (snapshot[1 + Y], snapshot[1 + VY])
    }

    fn plot_axes(&self) -> PlotAxes {
        PlotAxes {
            x_label: "altitude y (m)",
            y_label: "vertical speed (m/s)",
            x_range: (0.0, self.params.initial[Y] + 5.0),
            y_range: (-15.0, 1.0),
        }
    }

    /// `(touchdown time, impact speed)` scaled to the unit square; rollouts that never touch
    /// down sit at the right edge with zero speed.
    fn project(&self, r: &Rollout) -> [f64; 2] {
        let t_max = self.params.max_steps as f64 * self.params.dt;
        let n = r.states.len();
        let landed = n > 0 && r.states[n - 1][1 + Y] <= 0.0;
        if !landed {
            return [1.0, 0.0];
        }
        let before = if n >= 2 {
            r.states[n - 2].clone()
        } else {
            self.initial_snapshot()
        };
        let (t, speed) = self.touchdown(&before, &r.states[n - 1]);
        let v_scale = 2.0 * self.params.hard_landing_speed;
        [
            (t / t_max).clamp(0.0, 1.0),
            (speed / v_scale).clamp(0.0, 1.0),
        ]
    }

    fn default_epsilon(&self) -> f64 {
        0.1
    }
}

//! Torque-limited inverted pendulum under external torque disturbances.
//!
//! State is `(theta, theta_dot)` with `theta` measured from upright. One disturbance torque per
//! step. The episode fails once `|theta|` reaches the angle at which the saturated control
//! torque can no longer balance gravity.

use crate::autodiff::Real;
use crate::environments::mlp::{behavior_clone_odd, CloneReport, MlpPolicy};
use crate::error::Result;
use crate::scenario::{DiagonalGaussian, PlotAxes, Rollout, Scenario, StepOutcome};

/// Cloned policy shipped with the crate: `clone_expert(ExpertPd::default(), 1, 300)`.
const CLONED_POLICY: &str = include_str!("../../data/pendulum_policy.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    /// `m * g * l`, N m.
    pub mgl: f64,
    /// `m * l^2`, kg m^2.
    pub inertia: f64,
    /// Actuator limit, N m.
    pub max_torque: f64,
    /// Disturbance standard deviation, N m.
    pub sigma: f64,
    pub dt: f64,
    pub horizon: usize,
    /// Failure angle, rad.
    pub theta_fail: f64,
    pub initial: (f64, f64),
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mgl: 4.17,
            inertia: 0.425,
            max_torque: 2.0,
            sigma: 0.1f64.sqrt(),
            dt: 0.1,
            horizon: 50,
            theta_fail: 0.5,
            initial: (0.0, 0.0),
        }
    }
}

/// Saturated PD controller used as the cloning target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertPd {
    pub kp: f64,
    pub kd: f64,
    pub max_torque: f64,
}

impl Default for ExpertPd {
    fn default() -> Self {
        Self {
            kp: 6.0,
            kd: 0.2,
            max_torque: 2.0,
        }
    }
}

impl ExpertPd {
    pub fn act<R: Real>(&self, theta: R, theta_dot: R) -> R {
        (theta * -self.kp - theta_dot * self.kd).clamp(-self.max_torque, self.max_torque)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PendulumPolicy {
    Expert(ExpertPd),
    Mlp(MlpPolicy),
}

impl PendulumPolicy {
    /// The behavior-cloned network bundled with the crate.
    pub fn cloned() -> Self {
        PendulumPolicy::Mlp(
            MlpPolicy::from_text(CLONED_POLICY, ExpertPd::default().max_torque)
                .expect("bundled pendulum policy is well formed"),
        )
    }

    pub fn act<R: Real>(&self, theta: R, theta_dot: R) -> R {
        match self {
            PendulumPolicy::Expert(e) => e.act(theta, theta_dot),
            PendulumPolicy::Mlp(m) => m
                .forward(&[theta, theta_dot])
                .expect("pendulum policy takes two inputs")[0],
        }
    }
}

/// One semi-implicit Euler step.
pub fn pendulum_step<R: Real>(
    state: (R, R),
    torque_control: R,
    torque_disturbance: R,
    p: &PendulumParams,
) -> (R, R) {
    let (theta, theta_dot) = state;
    let accel = (theta.sin() * p.mgl + torque_control + torque_disturbance) / p.inertia;
    let theta_dot = theta_dot + accel * p.dt;
    let theta = theta + theta_dot * p.dt;
    (theta, theta_dot)
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    params: PendulumParams,
    policy: PendulumPolicy,
    prior: DiagonalGaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct PendulumState<R> {
    pub t: usize,
    pub theta: R,
    pub theta_dot: R,
}

impl Pendulum {
    pub fn new(params: PendulumParams, policy: PendulumPolicy) -> Self {
        let prior = DiagonalGaussian::repeated(&[params.sigma], params.horizon);
        Self {
            params,
            policy,
            prior,
        }
    }

    /// Default parameters with the bundled cloned network.
    pub fn with_cloned_policy() -> Self {
        Self::new(PendulumParams::default(), PendulumPolicy::cloned())
    }

    pub fn with_expert() -> Self {
        Self::new(
            PendulumParams::default(),
            PendulumPolicy::Expert(ExpertPd::default()),
        )
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn policy(&self) -> &PendulumPolicy {
        &self.policy
    }
}

impl Scenario for Pendulum {
    type State<R: Real> = PendulumState<R>;

    fn name(&self) -> &str {
        "pendulum"
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn step_dim(&self) -> usize {
        1
    }

    fn prior(&self) -> &DiagonalGaussian {
        &self.prior
    }

    fn initial_state<R: Real>(&self) -> PendulumState<R> {
        PendulumState {
            t: 0,
            theta: R::constant(self.params.initial.0),
            theta_dot: R::constant(self.params.initial.1),
        }
    }

    fn initial_margin<R: Real>(&self, s: &PendulumState<R>) -> R {
        R::constant(self.params.theta_fail) - s.theta.abs()
    }

    fn step<R: Real>(&self, s: &mut PendulumState<R>, _t: usize, noise: &[R]) -> StepOutcome<R> {
        let u = self.policy.act(s.theta, s.theta_dot);
        let (theta, theta_dot) = pendulum_step((s.theta, s.theta_dot), u, noise[0], &self.params);
        s.theta = theta;
        s.theta_dot = theta_dot;
        s.t += 1;
        let margin = R::constant(self.params.theta_fail) - theta.abs();
        StepOutcome {
            margin: Some(margin),
            done: margin.value() <= 0.0,
        }
    }

    /// `[time, theta, theta_dot]`.
    fn snapshot<R: Real>(&self, s: &PendulumState<R>) -> Vec<f64> {
        vec![
            s.t as f64 * self.params.dt,
            s.theta.value(),
            s.theta_dot.value(),
        ]
    }

    fn plot_point(&self, snapshot: &[f64]) -> (f64, f64) {
        (snapshot[0], snapshot[1])
    }

    fn plot_axes(&self) -> PlotAxes {
        let lim = 1.4 * self.params.theta_fail;
        PlotAxes {
            x_label: "time (s)",
            y_label: "theta (rad)",
            x_range: (0.0, self.params.horizon as f64 * self.params.dt),
            y_range: (-lim, lim),
        }
    }

    /// `(failure time, signed peak |theta|)` scaled to the unit square.
    fn project(&self, r: &Rollout) -> [f64; 2] {
        let t_end = self.params.horizon as f64 * self.params.dt;
        let t = r.states.last().map_or(0.0, |s| s[0]);
        let peak =
            r.states.iter().map(|s| s[1]).fold(
                0.0f64,
                |acc, th| if th.abs() > acc.abs() { th } else { acc },
            );
        let lim = 1.4 * self.params.theta_fail;
        [
            (t / t_end).clamp(0.0, 1.0),
            ((peak + lim) / (2.0 * lim)).clamp(0.0, 1.0),
        ]
    }

    fn default_epsilon(&self) -> f64 {
        0.003
    }
}

/// Grid of states on which the expert is imitated: `theta` in `[-0.6, 0.6]`,
/// `theta_dot` in `[-2, 2]`.
pub fn cloning_states(n_theta: usize, n_theta_dot: usize) -> Vec<Vec<f64>> {
    let lin = |lo: f64, hi: f64, n: usize, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut states = Vec::with_capacity(n_theta * n_theta_dot);
    for i in 0..n_theta {
        for j in 0..n_theta_dot {
            states.push(vec![
                lin(-0.6, 0.6, n_theta, i),
                lin(-2.0, 2.0, n_theta_dot, j),
            ]);
        }
    }
    states
}

/// Behavior-clones the PD expert into a 2-32-32-1 tanh network with zero biases.
///
/// The network is odd like the expert, so the upright equilibrium is exact and mirrored
/// disturbances give mirrored trajectories.
pub fn clone_expert(
    expert: ExpertPd,
    seed: u64,
    epochs: usize,
) -> Result<(MlpPolicy, CloneReport)> {
    let init = MlpPolicy::random(vec![2, 32, 32, 1], expert.max_torque, seed)?;
    let states = cloning_states(25, 25);
    behavior_clone_odd(
        &init,
        |s| vec![expert.act(s[0], s[1])],
        &states,
        epochs,
        3e-3,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{is_failure, rollout};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn step_examples() {
        let p = PendulumParams::default();
        assert_eq!(pendulum_step((0.0, 0.0), 0.0, 0.0, &p), (0.0, 0.0));
        let (th, thd) = pendulum_step((0.0, 0.0), 0.0, 0.417, &p);
        assert!(close(thd, 0.0981, 1e-4), "{thd}");
        assert!(close(th, 0.00981, 1e-5), "{th}");
        assert!(close(thd, 0.417 / 0.425 * 0.1, 1e-15));
        assert!(close(th, 0.417 / 0.425 * 0.01, 1e-15));
        let accel = (p.mgl * 0.5f64.sin() - 2.0) / p.inertia;
        assert!(accel.abs() < 5e-3, "{accel}");
    }

    #[test]
    fn failure_angle_is_torque_balance() {
        let p = PendulumParams::default();
        assert!((p.mgl * p.theta_fail.sin() - p.max_torque).abs() < 1e-2);
    }

    #[test]
    fn expert_examples() {
        let e = ExpertPd::default();
        assert_eq!(e.act(0.0, 0.0), 0.0);
        assert!(close(e.act(0.1, 0.0), -0.6, 1e-12));
        assert!(close(e.act(0.0, 1.0), -0.2, 1e-12));
        assert_eq!(e.act(0.4, 0.5), -2.0);
    }

    #[test]
    fn zero_disturbance_stays_upright() {
        for env in [Pendulum::with_expert(), Pendulum::with_cloned_policy()] {
            let x = vec![0.0; 50];
            assert!(!is_failure(&env, &x));
            let r = rollout(&env, &x);
            assert!(close(r.distance, 0.5, 1e-6), "{}", r.distance);
            assert_eq!(r.steps_executed, 50);
        }
    }

    #[test]
    fn large_push_fails_and_stops_early() {
        let env = Pendulum::with_expert();
        let x = vec![3.0; 50];
        let r = rollout(&env, &x);
        assert!(r.failed);
        assert_eq!(r.distance, 0.0);
        assert!(r.steps_executed < 50);
        assert_eq!(r.states.len(), r.steps_executed);
    }

    #[test]
    fn bundled_policy_is_bounded_and_stabilizing() {
        let PendulumPolicy::Mlp(m) = PendulumPolicy::cloned() else {
            unreachable!()
        };
        assert_eq!(m.layer_sizes(), &[2, 32, 32, 1]);
        let u = m.forward_f64(&[0.1, 0.0]).unwrap()[0];
        assert!((u - ExpertPd::default().act(0.1, 0.0)).abs() < 0.2, "{u}");
        assert_eq!(m.forward_f64(&[0.0, 0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn mirrored_disturbances_mirror_the_trajectory() {
        let env = Pendulum::with_cloned_policy();
        let x: Vec<f64> = (0..50)
            .map(|i| 0.3 * ((i as f64) * 0.7).sin() + 0.05)
            .collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = rollout(&env, &x);
        let b = rollout(&env, &neg);
        assert_eq!(a.states.len(), b.states.len());
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa[1], -sb[1]);
            assert_eq!(sa[2], -sb[2]);
        }
    }
}

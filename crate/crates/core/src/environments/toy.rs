//! One-step illustration: `s = x`, `x ~ N(0, 1)`, failure when `|s|` exceeds a threshold.

use crate::autodiff::Real;
use crate::scenario::{DiagonalGaussian, PlotAxes, Rollout, Scenario, StepOutcome};

#[derive(Debug, Clone)]
pub struct Toy {
    threshold: f64,
    prior: DiagonalGaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct ToyState<R> {
    pub s: R,
}

impl Toy {
    pub fn new(threshold: f64) -> Self {
        assert!(threshold > 0.0, "threshold must be positive");
        Self {
            threshold,
            prior: DiagonalGaussian::new(vec![1.0]),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for Toy {
    fn default() -> Self {
        Self::new(5.0)
    }
}

impl Scenario for Toy {
    type State<R: Real> = ToyState<R>;

    fn name(&self) -> &str {
        "toy"
    }

    fn horizon(&self) -> usize {
        1
    }

    fn step_dim(&self) -> usize {
        1
    }

    fn prior(&self) -> &DiagonalGaussian {
        &self.prior
    }

    fn initial_state<R: Real>(&self) -> ToyState<R> {
        ToyState {
            s: R::constant(0.0),
        }
    }

    fn initial_margin<R: Real>(&self, _state: &ToyState<R>) -> R {
        R::constant(self.threshold)
    }

    fn step<R: Real>(&self, state: &mut ToyState<R>, _t: usize, noise: &[R]) -> StepOutcome<R> {
        state.s = noise[0];
        StepOutcome {
            margin: Some(R::constant(self.threshold) - state.s.abs()),
            done: true,
        }
    }

    fn snapshot<R: Real>(&self, state: &ToyState<R>) -> Vec<f64> {
        vec![state.s.value()]
    }

    fn plot_point(&self, snapshot: &[f64]) -> (f64, f64) {
        (snapshot[0], 0.0)
    }

    fn plot_axes(&self) -> PlotAxes {
        let r = 2.0 * self.threshold;
        PlotAxes {
            x_label: "s",
            y_label: "",
            x_range: (-r, r),
            y_range: (-1.0, 1.0),
        }
    }

    fn project(&self, rollout: &Rollout) -> [f64; 2] {
        let s = rollout.states.last().map_or(0.0, |v| v[0]);
        let r = 2.0 * self.threshold;
        [((s + r) / (2.0 * r)).clamp(0.0, 1.0), 0.5]
    }

    fn default_epsilon(&self) -> f64 {
        0.04
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{
        grad_log_posterior, is_failure, rollout, smoothed_log_posterior, SmoothingConfig,
    };

    fn cfg() -> SmoothingConfig {
        SmoothingConfig::new(0.04).unwrap()
    }

    #[test]
    fn distances() {
        let toy = Toy::default();
        assert_eq!(rollout(&toy, &[5.0]).distance, 0.0);
        assert!(rollout(&toy, &[5.0]).failed);
        assert_eq!(rollout(&toy, &[0.0]).distance, 5.0);
        assert_eq!(rollout(&toy, &[4.0]).distance, 1.0);
        assert!(is_failure(&toy, &[6.0]));
        assert!(is_failure(&toy, &[-6.0]));
        assert!(!is_failure(&toy, &[4.9]));
    }

    /// Independent closed form: `-d^2/(2 eps) - ln(2 pi eps)/2 - x^2/2 - ln(2 pi)/2`.
    fn closed_form(x: f64, eps: f64) -> f64 {
        let d = (5.0 - x.abs()).max(0.0);
        -d * d / (2.0 * eps)
            - 0.5 * (2.0 * std::f64::consts::PI * eps).ln()
            - 0.5 * x * x
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    #[test]
    fn smoothed_posterior_values() {
        let toy = Toy::default();
        let v = smoothed_log_posterior(&toy, &cfg(), &[5.5]);
        assert!((v - (-15.3534)).abs() < 1e-4, "{v}");
        assert!((v - closed_form(5.5, 0.04)).abs() < 1e-12);
        // log N(5|0,0.04) + log N(0|0,1) = -312.5 + 0.6905 - 0.9189
        let v = smoothed_log_posterior(&toy, &cfg(), &[0.0]);
        assert!((v - (-312.728_45)).abs() < 1e-4, "{v}");
        assert!((v - closed_form(0.0, 0.04)).abs() < 1e-12);
    }

    #[test]
    fn failure_shift_is_constant() {
        let toy = Toy::default();
        let shift: f64 = crate::scenario::log_normal(0.0, 0.04);
        for x in [5.0, 5.2, 6.0, -7.5, -5.0001] {
            let v = smoothed_log_posterior(&toy, &cfg(), &[x]);
            let prior = toy.prior().log_density(&[x]);
            assert!((v - prior - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients() {
        let toy = Toy::default();
        let g = grad_log_posterior(&toy, &cfg(), &[4.0]).unwrap();
        assert!((g[0] - 21.0).abs() < 1e-12);
        let h = 1e-5;
        let fd = (smoothed_log_posterior(&toy, &cfg(), &[4.0 + h])
            - smoothed_log_posterior(&toy, &cfg(), &[4.0 - h]))
            / (2.0 * h);
        assert!((g[0] - fd).abs() / fd.abs() < 1e-6);
        for x in [5.5, -6.0, 7.25] {
            let g = grad_log_posterior(&toy, &cfg(), &[x]).unwrap();
            assert_eq!(g[0], -x);
        }
    }

    #[test]
    fn smoothing_term_falls_with_distance() {
        let toy = Toy::default();
        // Remove the prior term; what is left depends on the distance alone.
        let smoothing_term =
            |x: f64| smoothed_log_posterior(&toy, &cfg(), &[x]) - toy.prior().log_density(&[x]);
        let mut last = f64::INFINITY;
        for i in 0..=50 {
            let x = 5.0 - i as f64 * 0.1;
            let v = smoothing_term(x);
            assert!(v <= last, "not monotone at x = {x}");
            last = v;
        }
        assert!((smoothing_term(5.0) - smoothing_term(7.0)).abs() < 1e-12);
    }
}

//! Autonomous vehicle approaching a crosswalk while a pedestrian crosses.
//!
//! The vehicle drives along `+x` on the line `y = 0` and follows the Intelligent Driver Model,
//! treating its noisy observation of the pedestrian as a stopped-or-moving obstacle whenever
//! the pedestrian appears to be in (or heading into) the lane. Per step the disturbance is
//! `(dr_x, dr_y, dv_x, dv_y, a_x, a_y)`: sensor noise on the observed pedestrian position and
//! velocity, then the pedestrian's own acceleration.

use crate::autodiff::Real;
use crate::scenario::{DiagonalGaussian, PlotAxes, Rollout, Scenario, StepOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Time headway, s.
    pub time_headway: f64,
    /// Minimum gap, m.
    pub s0: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 11.2,
            time_headway: 1.0,
            s0: 2.0,
            a_max: 2.0,
            b: 3.0,
            delta: 4.0,
        }
    }
}

/// Position and velocity of an agent, `(r_x, r_y, v_x, v_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agent<R> {
    pub rx: R,
    pub ry: R,
    pub vx: R,
    pub vy: R,
}

impl Agent<f64> {
    pub fn new(rx: f64, ry: f64, vx: f64, vy: f64) -> Self {
        Self { rx, ry, vx, vy }
    }

    fn lift<R: Real>(&self) -> Agent<R> {
        Agent {
            rx: R::constant(self.rx),
            ry: R::constant(self.ry),
            vx: R::constant(self.vx),
            vy: R::constant(self.vy),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosswalkParams {
    pub idm: IdmParams,
    pub vehicle: Agent<f64>,
    pub pedestrian: Agent<f64>,
    pub collision_radius: f64,
    /// Half-width of the lane the vehicle watches, m.
    pub lane_half_width: f64,
    /// Variance of each observed position coordinate, m^2.
    pub var_position: f64,
    /// Variance of each observed velocity coordinate, (m/s)^2.
    pub var_velocity: f64,
    /// Variance of pedestrian acceleration along the road (`x`), (m/s^2)^2.
    pub var_accel_lon: f64,
    /// Variance of pedestrian acceleration across the road (`y`), (m/s^2)^2.
    pub var_accel_lat: f64,
    /// Distance from the vehicle's reference point to its front bumper, m; the IDM gap is
    /// measured from the bumper to the observed pedestrian.
    pub front_overhang: f64,
    /// Hardest braking the vehicle can apply, m/s^2 (positive).
    pub max_brake: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for CrosswalkParams {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            vehicle: Agent::new(-25.0, 0.0, 11.2, 0.0),
            pedestrian: Agent::new(0.0, -4.0, 0.0, 1.0),
            collision_radius: 2.0,
            lane_half_width: 1.5,
            var_position: 0.1,
            var_velocity: 0.1,
            var_accel_lon: 0.1,
            var_accel_lat: 0.01,
            front_overhang: 0.35,
            max_brake: 8.0,
            dt: 0.1,
            horizon: 50,
        }
    }
}

/// IDM acceleration behind an obstacle `gap` metres ahead closing at `closing_speed`.
///
/// `gap = f64::INFINITY` gives the free-road term alone.
pub fn idm_acceleration<R: Real>(v: R, gap: R, closing_speed: R, p: &IdmParams) -> R {
    let free = (v / p.v0).powf(p.delta);
    if gap.value().is_infinite() {
        return (R::constant(1.0) - free) * p.a_max;
    }
    let dynamic = v * p.time_headway + v * closing_speed / (2.0 * (p.a_max * p.b).sqrt());
    let s_star = dynamic.max(R::constant(0.0)) + p.s0;
    (R::constant(1.0) - free - (s_star / gap).square()) * p.a_max
}

#[derive(Debug, Clone)]
pub struct Crosswalk {
    params: CrosswalkParams,
    prior: DiagonalGaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct CrosswalkState<R> {
    pub t: usize,
    pub vehicle: Agent<R>,
    pub pedestrian: Agent<R>,
}

impl Crosswalk {
    pub fn new(params: CrosswalkParams) -> Self {
        let (sr, sv) = (params.var_position.sqrt(), params.var_velocity.sqrt());
        let step_std = [
            sr,
            sr,
            sv,
            sv,
            params.var_accel_lon.sqrt(),
            params.var_accel_lat.sqrt(),
        ];
        let prior = DiagonalGaussian::repeated(&step_std, params.horizon);
        Self { params, prior }
    }

    pub fn params(&self) -> &CrosswalkParams {
        &self.params
    }

    /// Vehicle acceleration given the observed pedestrian.
    ///
    /// The pedestrian counts as an obstacle while ahead of the vehicle and within the lane
    /// half-width widened by the collision radius plus `T_h` times its observed speed toward
    /// the lane centre.
    pub fn vehicle_acceleration<R: Real>(&self, vehicle: &Agent<R>, observed: &Agent<R>) -> R {
        let p = &self.params;
        let oy = observed.ry.value();
        let approach = if oy > 0.0 {
            -observed.vy.value()
        } else {
            observed.vy.value()
        };
        let corridor =
            p.lane_half_width + p.collision_radius + p.idm.time_headway * approach.max(0.0);
        let gap = observed.rx - vehicle.rx - p.front_overhang;
        let accel = if oy.abs() < corridor && observed.rx.value() > vehicle.rx.value() {
            // A non-positive gap means contact is imminent: brake as hard as possible.
            let gap = gap.max(R::constant(0.1));
            idm_acceleration(vehicle.vx, gap, vehicle.vx - observed.vx, &p.idm)
        } else {
            idm_acceleration(
                vehicle.vx,
                R::constant(f64::INFINITY),
                R::constant(0.0),
                &p.idm,
            )
        };
        accel.max(R::constant(-p.max_brake))
    }
}

impl Default for Crosswalk {
    fn default() -> Self {
        Self::new(CrosswalkParams::default())
    }
}

fn separation<R: Real>(a: &Agent<R>, b: &Agent<R>) -> R {
    ((a.rx - b.rx).square() + (a.ry - b.ry).square()).sqrt()
}

impl Scenario for Crosswalk {
    type State<R: Real> = CrosswalkState<R>;

    fn name(&self) -> &str {
        "crosswalk"
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn step_dim(&self) -> usize {
        6
    }

    fn prior(&self) -> &DiagonalGaussian {
        &self.prior
    }

    fn initial_state<R: Real>(&self) -> CrosswalkState<R> {
        CrosswalkState {
            t: 0,
            vehicle: self.params.vehicle.lift(),
            pedestrian: self.params.pedestrian.lift(),
        }
    }

    fn initial_margin<R: Real>(&self, s: &CrosswalkState<R>) -> R {
        separation(&s.vehicle, &s.pedestrian) - self.params.collision_radius
    }

    fn step<R: Real>(&self, s: &mut CrosswalkState<R>, _t: usize, x: &[R]) -> StepOutcome<R> {
        let dt = self.params.dt;
        let ped = s.pedestrian;
        let observed = Agent {
            rx: ped.rx + x[0],
            ry: ped.ry + x[1],
            vx: ped.vx + x[2],
            vy: ped.vy + x[3],
        };
        let accel = self.vehicle_acceleration(&s.vehicle, &observed);
        let veh = &mut s.vehicle;
        veh.vx = (veh.vx + accel * dt).max(R::constant(0.0));
        veh.rx = veh.rx + veh.vx * dt;

        let ped = &mut s.pedestrian;
        ped.vx = ped.vx + x[4] * dt;
        ped.vy = ped.vy + x[5] * dt;
        ped.rx = ped.rx + ped.vx * dt;
        ped.ry = ped.ry + ped.vy * dt;
        s.t += 1;

        let margin = separation(&s.vehicle, &s.pedestrian) - self.params.collision_radius;
        StepOutcome {
            margin: Some(margin),
            done: margin.value() <= 0.0,
        }
    }

    /// `[time, vehicle (4), pedestrian (4)]`.
    fn snapshot<R: Real>(&self, s: &CrosswalkState<R>) -> Vec<f64> {
        let (v, p) = (&s.vehicle, &s.pedestrian);
        vec![
            s.t as f64 * self.params.dt,
            v.rx.value(),
            v.ry.value(),
            v.vx.value(),
            v.vy.value(),
            p.rx.value(),
            p.ry.value(),
            p.vx.value(),
            p.vy.value(),
        ]
    }

    fn plot_point(&self, snapshot: &[f64]) -> (f64, f64) {
        (snapshot[5], snapshot[6])
    }

    fn plot_axes(&self) -> PlotAxes {
        PlotAxes {
            x_label: "pedestrian x (m)",
            y_label: "pedestrian y (m)",
            x_range: (-4.0, 4.0),
            y_range: (-3.0, 4.0),
        }
    }

    /// Pedestrian position at the end of the rollout (the collision, for failures).
    fn project(&self, r: &Rollout) -> [f64; 2] {
        let axes = self.plot_axes();
        let (x, y) = r.states.last().map_or(
            (self.params.pedestrian.rx, self.params.pedestrian.ry),
            |s| self.plot_point(s),
        );
        [
            ((x - axes.x_range.0) / (axes.x_range.1 - axes.x_range.0)).clamp(0.0, 1.0),
            ((y - axes.y_range.0) / (axes.y_range.1 - axes.y_range.0)).clamp(0.0, 1.0),
        ]
    }

    fn default_epsilon(&self) -> f64 {
        0.001
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{is_failure, rollout};

    /// The IDM formula evaluated by hand, independently of the generic code.
    fn idm_oracle(v: f64, gap: f64, dv: f64) -> f64 {
        let s_star = 2.0 + v * 1.5 + v * dv / (2.0 * 6.0f64.sqrt());
        2.0 * (1.0 - (v / 11.2).powi(4) - (s_star / gap).powi(2))
    }

    #[test]
    fn idm_examples() {
        let p = IdmParams {
            time_headway: 1.5,
            ..IdmParams::default()
        };
        assert!(idm_acceleration(11.2, f64::INFINITY, 0.0, &p).abs() < 1e-12);
        assert_eq!(idm_acceleration(0.0, 2.0, 0.0, &p), 0.0);
        let a = idm_acceleration(10.0, 30.0, 10.0, &p);
        assert!((a - idm_oracle(10.0, 30.0, 10.0)).abs() < 1e-12, "{a}");
        assert!((a - (-2.3814)).abs() < 1e-4, "{a}");
    }

    #[test]
    fn noise_free_vehicle_stops_and_pedestrian_crosses() {
        let env = Crosswalk::default();
        let x = vec![0.0; env.dimension()];
        let r = rollout(&env, &x);
        assert!(!r.failed);
        assert!(r.distance > 0.5 && r.distance < 1.0, "{}", r.distance);
        let last = r.states.last().unwrap();
        assert!(last[3] < 0.5, "final speed {}", last[3]);
        assert!(last[1] < 0.0, "vehicle past the crosswalk at {}", last[1]);
        assert!(last[6] > 0.0, "pedestrian at y = {}", last[6]);
    }

    #[test]
    fn walking_into_the_car_is_a_collision() {
        let env = Crosswalk::default();
        let mut x = vec![0.0; env.dimension()];
        for t in 0..env.horizon() {
            x[6 * t + 4] = -3.0;
        }
        let r = rollout(&env, &x);
        assert!(r.failed);
        assert!(is_failure(&env, &x));
        assert!(r.steps_executed < env.horizon());
    }

    #[test]
    fn margin_is_center_distance_minus_radius() {
        let env = Crosswalk::default();
        let s: CrosswalkState<f64> = CrosswalkState {
            t: 0,
            vehicle: Agent::new(-3.0, 0.0, 0.0, 0.0),
            pedestrian: Agent::new(0.0, 0.0, 0.0, 0.0),
        };
        assert!((env.initial_margin(&s) - 1.0).abs() < 1e-15);
    }
}

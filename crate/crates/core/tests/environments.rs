//! Scenario rollouts against independent plain-float reference simulators, plus structural
//! properties (symmetry, PSD filter covariance, noise-free behaviour).

use failprob::environments::{Crosswalk, Lander, Pendulum, Toy};
use failprob::samplers::stream_rng;
use failprob::scenario::{rollout, Scenario};
use nalgebra::{Matrix3, Matrix3x6, Matrix6, SMatrix, Vector3, Vector6};
use proptest::prelude::*;

/// Prior draws, with every coordinate scaled by `scale` to reach failures more often.
fn draws<S: Scenario>(s: &S, n: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            s.prior()
                .sample(&mut rng)
                .into_iter()
                .map(|v| v * scale)
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------------------
// Pendulum with the PD expert.

/// Returns `(min margin, steps)`.
fn pendulum_reference(x: &[f64]) -> (f64, usize) {
    let (mgl, inertia, dt, theta_fail) = (4.17f64, 0.425f64, 0.1f64, 0.5f64);
    let (mut th, mut om) = (0.0f64, 0.0f64);
    let mut margin = theta_fail;
    for (t, w) in x.iter().enumerate() {
        let u = (-6.0 * th - 0.2 * om).clamp(-2.0, 2.0);
        om += (mgl * th.sin() + u + w) / inertia * dt;
        th += om * dt;
        margin = margin.min(theta_fail - th.abs());
        if theta_fail - th.abs() <= 0.0 {
            return (margin, t + 1);
        }
    }
    (margin, x.len())
}

#[test]
fn pendulum_matches_reference() {
    let env = Pendulum::with_expert();
    let mut failures = 0;
    for x in draws(&env, 300, 2.5, 1) {
        let r = rollout(&env, &x);
        let (margin, steps) = pendulum_reference(&x);
        assert!((r.distance - margin.max(0.0)).abs() < 1e-12);
        assert_eq!(r.steps_executed, steps);
        failures += usize::from(r.failed);
    }
    assert!(failures > 10, "only {failures} failures exercised");
}

#[test]
fn cloned_pendulum_is_mirror_symmetric() {
    let env = Pendulum::with_cloned_policy();
    for x in draws(&env, 50, 2.0, 2) {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (a, b) = (rollout(&env, &x), rollout(&env, &neg));
        assert!((a.distance - b.distance).abs() < 1e-12);
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert!((sa[1] + sb[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn cloned_pendulum_is_safe_without_disturbance() {
    let env = Pendulum::with_cloned_policy();
    let r = rollout(&env, &vec![0.0; env.dimension()]);
    assert!(!r.failed);
    assert!((r.distance - 0.5).abs() < 1e-12);
}

// ---------------------------------------------------------------------------------------
// Crosswalk.

fn idm(v: f64, gap: Option<(f64, f64)>) -> f64 {
    let (v0, th, s0, a, b) = (11.2, 1.0, 2.0, 2.0, 3.0);
    let free = 1.0 - (v / v0).powi(4);
    match gap {
        None => a * free,
        Some((s, dv)) => {
            let s_star = s0 + (v * th + v * dv / (2.0 * (a * b).sqrt())).max(0.0);
            a * (free - (s_star / s).powi(2))
        }
    }
}

/// Returns `(min margin, steps, final vehicle speed)`.
fn crosswalk_reference(x: &[f64]) -> (f64, usize, f64) {
    let (dt, radius, half_width, overhang) = (0.1, 2.0, 1.5, 0.35);
    let (mut cx, mut cv) = (-25.0f64, 11.2f64);
    let (mut px, mut py, mut pvx, mut pvy) = (0.0f64, -4.0f64, 0.0f64, 1.0f64);
    let sep = |cx: f64, px: f64, py: f64| ((cx - px).powi(2) + py.powi(2)).sqrt() - radius;
    let mut margin = sep(cx, px, py);
    for (t, w) in x.chunks(6).enumerate() {
        let (ox, oy, ovx, ovy) = (px + w[0], py + w[1], pvx + w[2], pvy + w[3]);
        let toward_lane = if oy > 0.0 { -ovy } else { ovy };
        let in_path = oy.abs() < half_width + radius + toward_lane.max(0.0) && ox > cx;
        let gap = in_path.then(|| ((ox - cx - overhang).max(0.1), cv - ovx));
        let acc = idm(cv, gap).max(-8.0);
        cv = (cv + acc * dt).max(0.0);
        cx += cv * dt;
        pvx += w[4] * dt;
        pvy += w[5] * dt;
        px += pvx * dt;
        py += pvy * dt;
        let m = sep(cx, px, py);
        margin = margin.min(m);
        if m <= 0.0 {
            return (margin, t + 1, cv);
        }
    }
    (margin, x.len() / 6, cv)
}

#[test]
fn crosswalk_matches_reference() {
    let env = Crosswalk::default();
    let mut failures = 0;
    for (i, x) in draws(&env, 300, 4.0, 3).into_iter().enumerate() {
        let r = rollout(&env, &x);
        let (margin, steps, _) = crosswalk_reference(&x);
        assert!(
            (r.distance - margin.max(0.0)).abs() < 1e-9,
            "draw {i}: {} vs {margin}",
            r.distance
        );
        assert_eq!(r.steps_executed, steps, "draw {i}");
        failures += usize::from(r.failed);
    }
    assert!(failures > 5, "only {failures} failures exercised");
}

#[test]
fn crosswalk_noise_free_stops_without_collision() {
    let env = Crosswalk::default();
    let x = vec![0.0; env.dimension()];
    let r = rollout(&env, &x);
    let (margin, _, speed) = crosswalk_reference(&x);
    assert!(!r.failed);
    assert!(margin > 0.0);
    assert!(speed < 0.5, "final speed {speed}");
    assert!((r.states.last().unwrap()[3] - speed).abs() < 1e-9);
}

// ---------------------------------------------------------------------------------------
// Lander with an extended Kalman filter, written against nalgebra.

struct Ref {
    g: f64,
    dt: f64,
    d: f64,
}

const R: Ref = Ref {
    g: 1.62,
    dt: 0.1,
    d: 0.5,
};

fn act(m: &Vector6<f64>) -> (f64, f64) {
    let vy_des = -(0.25 * m[1]).max(1.0);
    let thrust = ((vy_des - m[4]) * 2.0 + R.g).clamp(0.0, 15.0);
    let side = (0.2 * m[3] + 4.0 * m[2] + 4.0 * m[5]).clamp(-2.0, 2.0);
    (thrust, side)
}

fn dynamics(s: &Vector6<f64>, (t, f): (f64, f64)) -> Vector6<f64> {
    let (sn, cs) = s[2].sin_cos();
    let ax = t * sn + f * cs;
    let ay = t * cs - f * sn - R.g;
    let alpha = -f * R.d;
    let vx = s[3] + ax * R.dt;
    let vy = s[4] + ay * R.dt;
    let om = s[5] + alpha * R.dt;
    Vector6::new(
        s[0] + vx * R.dt,
        s[1] + vy * R.dt,
        s[2] + om * R.dt,
        vx,
        vy,
        om,
    )
}

fn dynamics_jacobian(s: &Vector6<f64>, (t, f): (f64, f64)) -> Matrix6<f64> {
    let (sn, cs) = s[2].sin_cos();
    let dax = t * cs - f * sn;
    let day = -t * sn - f * cs;
    let dt = R.dt;
    let mut j = Matrix6::identity();
    j[(0, 2)] = dt * dt * dax;
    j[(0, 3)] = dt;
    j[(1, 2)] = dt * dt * day;
    j[(1, 4)] = dt;
    j[(2, 5)] = dt;
    j[(3, 2)] = dt * dax;
    j[(4, 2)] = dt * day;
    j
}

fn observe(s: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(s[5], s[3], s[1] / s[2].cos().max(0.1))
}

fn observation_jacobian(s: &Vector6<f64>) -> Matrix3x6<f64> {
    let c = s[2].cos();
    let mut h = Matrix3x6::zeros();
    h[(0, 5)] = 1.0;
    h[(1, 3)] = 1.0;
    if c > 0.1 {
        h[(2, 1)] = 1.0 / c;
        h[(2, 2)] = s[1] * s[2].sin() / (c * c);
    } else {
        h[(2, 1)] = 10.0;
    }
    h
}

/// Returns `(distance, covariance after every step)`.
fn lander_reference(x: &[f64]) -> (f64, Vec<Matrix6<f64>>) {
    let mut truth = Vector6::new(0.0, 50.0, 0.0, 2.0, -10.0, 0.0);
    let mut mean = truth;
    let mut cov = Matrix6::from_diagonal(&Vector6::new(1.0, 25.0, 0.01, 1.0, 4.0, 0.01));
    let q = Matrix6::identity() * 1e-6;
    let r = Matrix3::from_diagonal(&Vector3::new(0.02, 0.1, 1.0));
    let mut covs = Vec::new();
    for w in x.chunks(3) {
        let a = act(&mean);
        let before = truth;
        truth = dynamics(&truth, a);
        let z = observe(&truth) + Vector3::new(w[0], w[1], w[2]);

        let f = dynamics_jacobian(&mean, a);
        let mean_p = dynamics(&mean, a);
        let cov_p = f * cov * f.transpose() + q;
        let h = observation_jacobian(&mean_p);
        let s = h * cov_p * h.transpose() + r;
        let k = cov_p * h.transpose() * s.try_inverse().unwrap();
        mean = mean_p + k * (z - observe(&mean_p));
        let ikh = Matrix6::identity() - k * h;
        cov = ikh * cov_p * ikh.transpose() + k * r * k.transpose();
        covs.push(cov);

        if truth[1] <= 0.0 {
            let frac = before[1] / (before[1] - truth[1]);
            let vx = before[3] + (truth[3] - before[3]) * frac;
            let vy = before[4] + (truth[4] - before[4]) * frac;
            return ((6.0 - (vx * vx + vy * vy).sqrt()).max(0.0), covs);
        }
    }
    (6.0, covs)
}

fn lander_cov(snapshot: &[f64]) -> Matrix6<f64> {
    SMatrix::<f64, 6, 6>::from_row_slice(&snapshot[13..49])
}

/// Disturbances with a sustained bias on the gyro and velocity channels, which drives the
/// filter off and produces hard landings.
fn biased_draws(env: &Lander, n: usize, seed: u64) -> Vec<Vec<f64>> {
    draws(env, n, 1.0, seed)
        .into_iter()
        .enumerate()
        .map(|(i, mut x)| {
            let bias = 0.1 * i as f64;
            for w in x.chunks_mut(3) {
                w[0] += bias * 0.14;
                w[1] -= bias * 0.3;
            }
            x
        })
        .collect()
}

#[test]
fn lander_matches_reference() {
    let env = Lander::default();
    let mut failures = 0;
    for x in biased_draws(&env, 30, 4) {
        let r = rollout(&env, &x);
        let (d, covs) = lander_reference(&x);
        assert!((r.distance - d).abs() < 1e-8, "{} vs {d}", r.distance);
        for (s, c) in r.states.iter().zip(&covs) {
            assert!((lander_cov(s) - c).abs().max() < 1e-8);
        }
        failures += usize::from(r.failed);
    }
    assert!(failures > 0, "no hard landings exercised");
}

#[test]
fn lander_noise_free_lands_softly() {
    let env = Lander::default();
    let r = rollout(&env, &vec![0.0; env.dimension()]);
    assert!(!r.failed);
    let last = r.states.last().unwrap();
    assert!(last[2] <= 0.0, "never touched down");
    assert!(r.distance > 4.0, "impact slack {}", r.distance);
}

#[test]
fn lander_covariance_stays_psd() {
    let env = Lander::default();
    let mut x = draws(&env, 20, 1.0, 5);
    x.extend(biased_draws(&env, 20, 6));
    for xi in x {
        for s in rollout(&env, &xi).states {
            let c = lander_cov(&s);
            assert!((c - c.transpose()).abs().max() < 1e-9);
            let eig = c.symmetric_eigen().eigenvalues;
            assert!(eig.min() > -1e-12, "eigenvalue {}", eig.min());
        }
    }
}

// ---------------------------------------------------------------------------------------
// Toy.

proptest! {
    #[test]
    fn toy_failure_iff_beyond_threshold(x in -10.0f64..10.0) {
        let toy = Toy::default();
        let r = rollout(&toy, &[x]);
        prop_assert_eq!(r.failed, x.abs() >= 5.0);
        prop_assert_eq!(r.distance, (5.0 - x.abs()).max(0.0));
    }

    #[test]
    fn distances_are_non_negative_and_zero_iff_failed(seed in 0u64..1000) {
        let env = Pendulum::with_expert();
        let x = &draws(&env, 1, 3.0, seed)[0];
        let r = rollout(&env, x);
        prop_assert!(r.distance >= 0.0);
        prop_assert_eq!(r.failed, r.distance == 0.0);
    }
}

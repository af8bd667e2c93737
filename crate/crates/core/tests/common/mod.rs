//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use failprob::samplers::stream_rng;
use failprob::scenario::{is_failure, Scenario};
use rand::Rng;

/// Prior draws with every coordinate scaled by `scale`.
pub fn scaled_draws<S: Scenario>(s: &S, n: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
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

/// `n` safe and `n` failing disturbances, found by prior draws whose scale and per-coordinate
/// offset grow until enough of each turn up. Offsets push every step the same way, which is
/// what it takes to crash the lander.
pub fn safe_and_failing<S: Scenario>(s: &S, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = stream_rng(seed, 1);
    let (mut safe, mut fail) = (Vec::new(), Vec::new());
    let std = s.prior().std().to_vec();
    for attempt in 0..200_000usize {
        if safe.len() >= n && fail.len() >= n {
            break;
        }
        let level = (attempt / 50) as f64;
        let scale = 1.0 + 0.25 * level.min(12.0);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let offset = 0.1 * level * sign;
        let x: Vec<f64> = std
            .iter()
            .map(|sd| sd * (scale * rng.sample::<f64, _>(rand_distr::StandardNormal) + offset))
            .collect();
        if is_failure(s, &x) {
            if fail.len() < n {
                fail.push(x);
            }
        } else if safe.len() < n {
            safe.push(x);
        }
    }
    assert!(
        safe.len() == n && fail.len() == n,
        "{}: found {} safe and {} failing points",
        s.name(),
        safe.len(),
        fail.len()
    );
    (safe, fail)
}

/// Largest componentwise error of `grad` against central differences of `f` with step `h`,
/// relative to `max(|fd|, 1)`.
pub fn max_fd_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        let fd = (up - dn) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

/// `z[t+1] = a z[t] + x[t]`, `x[t] ~ N(0, q)`, `z[0] = 0`, observed once at the end:
/// `y ~ N(z[T], r)`.
pub struct LinearGaussian {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub y: f64,
    pub steps: usize,
    std: [f64; 1],
}

impl LinearGaussian {
    pub fn new(a: f64, q: f64, r: f64, y: f64, steps: usize) -> Self {
        Self {
            a,
            q,
            r,
            y,
            steps,
            std: [q.sqrt()],
        }
    }

    /// Latent states `z[1..=T]` of a disturbance path.
    pub fn states(&self, x: &[f64]) -> Vec<f64> {
        let mut z = 0.0;
        x.iter()
            .map(|xi| {
                z = self.a * z + xi;
                z
            })
            .collect()
    }

    /// Rauch–Tung–Striebel smoothed means and variances of `z[1..=T]`.
    pub fn smoother(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.steps;
        let (mut mp, mut pp) = (vec![0.0; n], vec![0.0; n]);
        let (mut mf, mut pf) = (vec![0.0; n], vec![0.0; n]);
        let (mut m, mut p) = (0.0, 0.0);
        for t in 0..n {
            mp[t] = self.a * m;
            pp[t] = self.a * self.a * p + self.q;
            (m, p) = (mp[t], pp[t]);
            if t + 1 == n {
                let k = p / (p + self.r);
                m += k * (self.y - m);
                p *= 1.0 - k;
            }
            mf[t] = m;
            pf[t] = p;
        }
        let (mut ms, mut ps) = (mf.clone(), pf.clone());
        for t in (0..n - 1).rev() {
            let g = pf[t] * self.a / pp[t + 1];
            ms[t] = mf[t] + g * (ms[t + 1] - mp[t + 1]);
            ps[t] = pf[t] + g * g * (ps[t + 1] - pp[t + 1]);
        }
        (ms, ps)
    }
}

impl failprob::samplers::SequentialTarget for LinearGaussian {
    type State = f64;

    fn steps(&self) -> usize {
        self.steps
    }

    fn step_dim(&self) -> usize {
        1
    }

    fn step_std(&self, _t: usize) -> &[f64] {
        &self.std
    }

    fn initial(&self) -> f64 {
        0.0
    }

    fn advance(&self, z: &mut f64, _t: usize, x: &[f64]) -> f64 {
        *z = self.a * *z + x[0];
        0.0
    }

    fn terminal_log_weight(&self, z: &f64) -> f64 {
        -(self.y - z).powi(2) / (2.0 * self.r)
    }
}

/// Iterated conditional SMC: one path per sweep, the first sweep unconditional.
pub fn particle_gibbs_paths<T: failprob::samplers::SequentialTarget>(
    target: &T,
    particles: usize,
    sweeps: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    let mut paths: Vec<Vec<f64>> = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let s = failprob::samplers::pg::csmc_sweep(
            target,
            particles,
            0.5,
            paths.last().map(Vec::as_slice),
            &mut rng,
        );
        paths.push(s.path);
    }
    paths
}

/// Monte Carlo standard error of the mean of a correlated series, with the effective sample
/// size taken from the lag-1 autocorrelation.
pub fn mc_standard_error(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let lag1 = v
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / ((n - 1.0) * var);
    let rho = lag1.clamp(0.0, 0.99);
    let n_eff = n * (1.0 - rho) / (1.0 + rho);
    (var / n_eff).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Standard normal log-density in `dim` dimensions.
pub struct StdNormal(pub usize);

impl failprob::samplers::LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn log_density_and_grad(&self, x: &[f64]) -> failprob::error::Result<(f64, Vec<f64>)> {
        Ok((self.log_density(x), x.iter().map(|v| -v).collect()))
    }
}

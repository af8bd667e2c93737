//! Global-best particle swarm optimization, used to start chains near failures.

use rand::Rng;

use crate::scenario::{smoothed_log_posterior, DiagonalGaussian, Scenario, SmoothingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub n_particles: usize,
    pub n_iters: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a multiple of the prior standard deviation.
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            n_particles: 5,
            n_iters: 100,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            velocity_clamp: 2.0,
        }
    }
}

/// Maximizes `f` starting from prior draws. Returns the best point and its value.
///
/// Non-finite objective values rank below everything else.
pub fn pso_maximize<F, G>(
    f: F,
    prior: &DiagonalGaussian,
    cfg: &PsoConfig,
    rng: &mut G,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
    G: Rng + ?Sized,
{
    assert!(cfg.n_particles > 0, "PSO needs at least one particle");
    let score = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let vmax: Vec<f64> = prior.std().iter().map(|s| cfg.velocity_clamp * s).collect();
    let mut pos: Vec<Vec<f64>> = (0..cfg.n_particles).map(|_| prior.sample(rng)).collect();
    let mut vel = vec![vec![0.0; prior.dim()]; cfg.n_particles];
    let mut best_pos = pos.clone();
    let mut best_val: Vec<f64> = pos.iter().map(|x| score(x)).collect();
    let mut g = argmax(&best_val);

    for _ in 0..cfg.n_iters {
        for i in 0..cfg.n_particles {
            for d in 0..prior.dim() {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let v = cfg.inertia * vel[i][d]
                    + cfg.cognitive * r1 * (best_pos[i][d] - pos[i][d])
                    + cfg.social * r2 * (best_pos[g][d] - pos[i][d]);
                vel[i][d] = v.clamp(-vmax[d], vmax[d]);
                pos[i][d] += vel[i][d];
            }
            let v = score(&pos[i]);
            if v > best_val[i] {
                best_val[i] = v;
                best_pos[i].clone_from(&pos[i]);
            }
        }
        g = argmax(&best_val);
    }
    (best_pos.swap_remove(g), best_val[g])
}

/// First index of the largest value.
fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Best point of a swarm search on the scenario's smoothed log-posterior.
pub fn pso_init<S: Scenario + ?Sized, G: Rng + ?Sized>(
    scenario: &S,
    smoothing: &SmoothingConfig,
    cfg: &PsoConfig,
    rng: &mut G,
) -> Vec<f64> {
    pso_maximize(
        |x| smoothed_log_posterior(scenario, smoothing, x),
        scenario.prior(),
        cfg,
        rng,
    )
    .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::stream_rng;

    #[test]
    fn quadratic_bowl() {
        let prior = DiagonalGaussian::new(vec![1.0; 3]);
        for seed in 0..5 {
            let (x, v) = pso_maximize(
                |x| -x.iter().map(|v| v * v).sum::<f64>(),
                &prior,
                &PsoConfig::default(),
                &mut stream_rng(seed, 0),
            );
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 0.1, "seed {seed}: |x| = {norm}");
            assert!((v + norm * norm).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_iterations_returns_best_prior_draw() {
        let prior = DiagonalGaussian::new(vec![1.0, 2.0]);
        let cfg = PsoConfig {
            n_iters: 0,
            ..PsoConfig::default()
        };
        let f = |x: &[f64]| x[0] + x[1];
        let (x, v) = pso_maximize(f, &prior, &cfg, &mut stream_rng(3, 0));
        let mut rng = stream_rng(3, 0);
        let draws: Vec<Vec<f64>> = (0..5).map(|_| prior.sample(&mut rng)).collect();
        let best = draws.iter().map(|d| f(d)).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(v, best);
        assert!(draws.contains(&x));
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), 0);
    }
}

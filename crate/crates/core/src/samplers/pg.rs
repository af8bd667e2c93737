//! Particle Gibbs: iterated conditional SMC over per-step disturbances.
//!
//! Particles propose each step's disturbances from the prior. The failure likelihood enters
//! only as a terminal weight, so intermediate weights stay uniform unless an optional per-step
//! potential is switched on. Resampling is multinomial and is triggered when the effective
//! sample size drops below a fraction of the particle count. The retained reference path
//! always occupies slot 0.

use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{stream_rng, with_thread_pool, ChainStats, SampleBatch};
use crate::error::{Error, Result};
use crate::scenario::{log_normal, Scenario, SmoothingConfig};

/// A state-space model driven by per-step disturbances with independent Gaussian priors.
pub trait SequentialTarget: Sync {
    type State: Clone + Send + Sync;

    fn steps(&self) -> usize;

    fn step_dim(&self) -> usize;

    /// Prior standard deviations of step `t`'s disturbances.
    fn step_std(&self, t: usize) -> &[f64];

    fn initial(&self) -> Self::State;

    /// Applies step `t` and returns the log of the incremental potential.
    fn advance(&self, state: &mut Self::State, t: usize, x: &[f64]) -> f64;

    /// Log weight applied once all steps have run.
    fn terminal_log_weight(&self, state: &Self::State) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgConfig {
    pub n_particles: usize,
    /// Emitted paths, one per sweep.
    pub n_sweeps: usize,
    /// Resample when ESS falls below this fraction of `n_particles`.
    pub resample_threshold: f64,
    /// Temperature `tau` of the optional per-step potential `exp(-running distance / tau)`.
    /// The terminal weight compensates, so the target is unchanged.
    pub step_temperature: Option<f64>,
}

impl PgConfig {
    pub fn new(n_particles: usize, n_sweeps: usize) -> Self {
        Self {
            n_particles,
            n_sweeps,
            resample_threshold: 0.5,
            step_temperature: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig(format!(
                "particle Gibbs needs at least 2 particles, got {}",
                self.n_particles
            )));
        }
        if let Some(tau) = self.step_temperature {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "step temperature {tau} is not positive"
                )));
            }
        }
        Ok(())
    }
}

impl Default for PgConfig {
    fn default() -> Self {
        Self::new(1000, 1000)
    }
}

/// Result of one (conditional) SMC sweep.
#[derive(Debug, Clone)]
pub struct Sweep {
    /// Selected path, flattened step-major.
    pub path: Vec<f64>,
    /// Final-step slot the path was traced back from; 0 is the reference.
    pub selected: usize,
    /// Final log weights.
    pub log_weights: Vec<f64>,
}

fn sanitize(w: f64) -> f64 {
    if w.is_nan() {
        f64::NEG_INFINITY
    } else {
        w
    }
}

/// Weights `exp(log_w - max)`, or `None` if every particle has zero weight.
fn normalized(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    Some(log_w.iter().map(|w| (w - max).exp()).collect())
}

fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|w| w * w).sum();
    s * s / s2
}

/// One SMC sweep, conditional on `reference` when given.
///
/// If every final weight is zero, the reference is returned unchanged (slot 0).
pub fn csmc_sweep<T: SequentialTarget, G: Rng + ?Sized>(
    target: &T,
    n_particles: usize,
    resample_threshold: f64,
    reference: Option<&[f64]>,
    rng: &mut G,
) -> Sweep {
    let (steps, k) = (target.steps(), target.step_dim());
    if let Some(r) = reference {
        assert_eq!(r.len(), steps * k, "reference path length mismatch");
    }
    let n = n_particles;
    let mut states = vec![target.initial(); n];
    let mut log_w = vec![0.0; n];
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(steps);

    for t in 0..steps {
        let mut parents: Vec<usize> = (0..n).collect();
        if t > 0 {
            if let Some(w) = normalized(&log_w) {
                if effective_sample_size(&w) < resample_threshold * n as f64 {
                    let dist = WeightedIndex::new(&w).expect("weights are finite and not all zero");
                    let first = usize::from(reference.is_some());
                    for p in parents.iter_mut().skip(first) {
                        *p = dist.sample(rng);
                    }
                    states = parents.iter().map(|&a| states[a].clone()).collect();
                    log_w.fill(0.0);
                }
            }
        }

        let std = target.step_std(t);
        let mut x = vec![0.0; n * k];
        for (i, xi) in x.chunks_mut(k).enumerate() {
            match reference {
                Some(r) if i == 0 => xi.copy_from_slice(&r[t * k..(t + 1) * k]),
                _ => {
                    for (v, s) in xi.iter_mut().zip(std) {
                        *v = s * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        let increments: Vec<f64> = states
            .par_iter_mut()
            .zip(x.par_chunks(k))
            .map(|(s, xi)| target.advance(s, t, xi))
            .collect();
        for (w, inc) in log_w.iter_mut().zip(increments) {
            *w = sanitize(*w + inc);
        }
        xs.push(x);
        ancestors.push(parents);
    }

    let terminal: Vec<f64> = states
        .par_iter()
        .map(|s| target.terminal_log_weight(s))
        .collect();
    for (w, term) in log_w.iter_mut().zip(terminal) {
        *w = sanitize(*w + term);
    }

    let selected = match (normalized(&log_w), reference) {
        (Some(w), _) => WeightedIndex::new(&w)
            .expect("weights are finite and not all zero")
            .sample(rng),
        (None, Some(r)) => {
            return Sweep {
                path: r.to_vec(),
                selected: 0,
                log_weights: log_w,
            }
        }
        (None, None) => 0,
    };

    let mut path = vec![0.0; steps * k];
    let mut idx = selected;
    for t in (0..steps).rev() {
        path[t * k..(t + 1) * k].copy_from_slice(&xs[t][idx * k..(idx + 1) * k]);
        idx = ancestors[t][idx];
    }
    Sweep {
        path,
        selected,
        log_weights: log_w,
    }
}

/// A scenario's smoothed failure posterior as a sequential target.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioTarget<'a, S: ?Sized> {
    pub scenario: &'a S,
    pub smoothing: SmoothingConfig,
    pub step_temperature: Option<f64>,
}

/// Scenario state plus the running minimum margin.
#[derive(Debug, Clone)]
pub struct TrackedState<St> {
    pub state: St,
    pub distance: f64,
    pub done: bool,
}

impl<S: Scenario + ?Sized> ScenarioTarget<'_, S> {
    fn potential(&self, distance: f64) -> f64 {
        self.step_temperature
            .map_or(0.0, |tau| -distance.max(0.0) / tau)
    }
}

impl<S: Scenario + ?Sized> SequentialTarget for ScenarioTarget<'_, S>
where
    S::State<f64>: Send + Sync,
{
    type State = TrackedState<S::State<f64>>;

    fn steps(&self) -> usize {
        self.scenario.horizon()
    }

    fn step_dim(&self) -> usize {
        self.scenario.step_dim()
    }

    fn step_std(&self, t: usize) -> &[f64] {
        let k = self.scenario.step_dim();
        &self.scenario.prior().std()[t * k..(t + 1) * k]
    }

    fn initial(&self) -> Self::State {
        let state = self.scenario.initial_state::<f64>();
        let distance = self.scenario.initial_margin(&state);
        TrackedState {
            state,
            distance,
            done: false,
        }
    }

    fn advance(&self, s: &mut Self::State, t: usize, x: &[f64]) -> f64 {
        // After the episode ends the remaining disturbances are unused draws from the prior.
        if s.done {
            return 0.0;
        }
        let before = self.potential(s.distance);
        let out = self.scenario.step(&mut s.state, t, x);
        if let Some(m) = out.margin {
            s.distance = s.distance.min(m);
        }
        s.done = out.done;
        self.potential(s.distance) - before
    }

    fn terminal_log_weight(&self, s: &Self::State) -> f64 {
        log_normal(s.distance.max(0.0), self.smoothing.epsilon()) - self.potential(s.distance)
    }
}

/// Particle Gibbs on a scenario, emitting one path per sweep.
///
/// The first sweep is unconditional; each later sweep conditions on the previous path.
pub fn particle_gibbs<S: Scenario + ?Sized>(
    scenario: &S,
    smoothing: &SmoothingConfig,
    cfg: &PgConfig,
    seed: u64,
    chain_id: usize,
) -> Result<SampleBatch>
where
    S::State<f64>: Send + Sync,
{
    cfg.validate()?;
    let start = Instant::now();
    let target = ScenarioTarget {
        scenario,
        smoothing: *smoothing,
        step_temperature: cfg.step_temperature,
    };
    let mut rng = stream_rng(seed, chain_id as u64);
    let (samples, moved) = with_thread_pool(|| {
        let mut samples: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_sweeps);
        let mut moved = 0usize;
        for _ in 0..cfg.n_sweeps {
            let sweep = csmc_sweep(
                &target,
                cfg.n_particles,
                cfg.resample_threshold,
                samples.last().map(Vec::as_slice),
                &mut rng,
            );
            moved += usize::from(sweep.selected != 0);
            samples.push(sweep.path);
        }
        (samples, moved)
    });
    let stats = ChainStats {
        mean_accept: if cfg.n_sweeps > 0 {
            moved as f64 / cfg.n_sweeps as f64
        } else {
            0.0
        },
        ..ChainStats::default()
    };
    let mut batch = with_thread_pool(|| {
        SampleBatch::from_draws(scenario, smoothing, chain_id, samples, 0.0, stats)
    });
    batch.wall_time = start.elapsed().as_secs_f64();
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Random walk `s_t = s_{t-1} + x_t` with a terminal weight that rejects everything.
    struct Walk {
        std: Vec<f64>,
        dead: bool,
    }

    impl SequentialTarget for Walk {
        type State = f64;
        fn steps(&self) -> usize {
            3
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
        fn advance(&self, s: &mut f64, _t: usize, x: &[f64]) -> f64 {
            *s += x[0];
            0.0
        }
        fn terminal_log_weight(&self, s: &f64) -> f64 {
            if self.dead {
                f64::NEG_INFINITY
            } else {
                -0.5 * s * s
            }
        }
    }

    #[test]
    fn all_zero_weights_keep_reference() {
        let w = Walk {
            std: vec![1.0],
            dead: true,
        };
        let reference = [0.3, -0.2, 0.1];
        let s = csmc_sweep(&w, 10, 0.5, Some(&reference), &mut stream_rng(0, 0));
        assert_eq!(s.path, reference);
        assert_eq!(s.selected, 0);
    }

    #[test]
    fn dominant_reference_persists_with_two_particles() {
        let w = Walk {
            std: vec![1.0],
            dead: false,
        };
        // A reference ending at 0 has the maximal terminal weight.
        let reference = [0.5, -0.5, 0.0];
        let mut rng = stream_rng(1, 0);
        let mut kept = 0;
        for _ in 0..200 {
            let s = csmc_sweep(&w, 2, 0.5, Some(&reference), &mut rng);
            assert!(s.selected < 2);
            if s.selected == 0 {
                assert_eq!(s.path, reference);
                kept += 1;
            }
        }
        assert!(kept > 100, "reference kept {kept}/200 times");
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[1.0; 8]) - 8.0).abs() < 1e-12);
        assert!((effective_sample_size(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(normalized(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn rejects_single_particle() {
        assert!(PgConfig::new(1, 10).validate().is_err());
    }
}

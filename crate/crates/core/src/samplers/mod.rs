//! Samplers for the smoothed failure posterior.
//!
//! - [`nuts`]: gradient-based No-U-Turn sampling with step-size and diagonal mass adaptation.
//! - [`pg`]: Particle Gibbs (iterated conditional SMC), a black-box baseline.
//! - [`mc`]: direct Monte Carlo from the disturbance prior.
//! - [`pso`]: particle swarm optimization used to pick chain starting points.
//!
//! Every sampler is a deterministic function of its inputs and a 64-bit seed. Independent
//! streams (one per chain, per Monte Carlo block, ...) come from ChaCha stream selection, so
//! adding chains never perturbs the streams of existing ones.

pub mod mc;
pub mod nuts;
pub mod pg;
pub mod pso;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scenario::{log_normal, log_posterior_and_grad, rollout, Scenario, SmoothingConfig};

pub use mc::direct_mc;
pub use nuts::{leapfrog, ChainState, DualAveraging, NutsConfig, NutsSampler, PhasePoint};
pub use pg::{particle_gibbs, PgConfig, ScenarioTarget, SequentialTarget};
pub use pso::{pso_init, pso_maximize, PsoConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FAILPROB_THREADS";

/// Stream offset for chain initialization, kept apart from the chains' own streams.
const INIT_STREAM: u64 = 1 << 32;

/// An unnormalized log density with gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    fn log_density_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// The smoothed failure posterior of a scenario as a [`LogDensity`].
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a, S: ?Sized> {
    pub scenario: &'a S,
    pub smoothing: SmoothingConfig,
}

impl<'a, S: Scenario + ?Sized> Posterior<'a, S> {
    pub fn new(scenario: &'a S, smoothing: SmoothingConfig) -> Self {
        Self {
            scenario,
            smoothing,
        }
    }
}

impl<S: Scenario + ?Sized> LogDensity for Posterior<'_, S> {
    fn dim(&self) -> usize {
        self.scenario.dimension()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        crate::scenario::smoothed_log_posterior(self.scenario, &self.smoothing, x)
    }

    fn log_density_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = log_posterior_and_grad(self.scenario, &self.smoothing, x)?;
        Ok((v, g.into_vec()))
    }
}

/// RNG for stream `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Worker count: `FAILPROB_THREADS` if set to a positive integer, else all cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a pool sized by [`thread_count`].
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Per-chain sampler diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainStats {
    /// Mean acceptance statistic over reported draws.
    pub mean_accept: f64,
    /// Divergent transitions among reported draws.
    pub divergences: usize,
    pub warmup_divergences: usize,
    /// Step size used for the reported draws.
    pub step_size: f64,
    pub mean_tree_depth: f64,
    /// Log-density gradient evaluations, warmup included.
    pub gradient_evals: usize,
}

/// Reported draws of one chain (or one Monte Carlo / Particle Gibbs run).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub chain_id: usize,
    pub samples: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    /// `log p(x)` under the disturbance prior.
    pub log_prior: Vec<f64>,
    pub failed: Vec<bool>,
    /// Seconds.
    pub wall_time: f64,
    pub stats: ChainStats,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_failures(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }

    /// Checks that all per-draw columns have the same length.
    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        if self.log_posterior.len() != n || self.log_prior.len() != n || self.failed.len() != n {
            return Err(Error::Shape(format!(
                "batch {}: {} samples, {} log posteriors, {} log priors, {} flags",
                self.chain_id,
                n,
                self.log_posterior.len(),
                self.log_prior.len(),
                self.failed.len()
            )));
        }
        Ok(())
    }

    /// Builds a batch from raw draws by re-simulating each one.
    pub fn from_draws<S: Scenario + ?Sized>(
        scenario: &S,
        smoothing: &SmoothingConfig,
        chain_id: usize,
        samples: Vec<Vec<f64>>,
        wall_time: f64,
        stats: ChainStats,
    ) -> Self {
        let evaluated: Vec<(f64, f64, bool)> = samples
            .par_iter()
            .map(|x| {
                let r = rollout(scenario, x);
                (
                    log_normal(r.distance, smoothing.epsilon()) + r.log_prior,
                    r.log_prior,
                    r.failed,
                )
            })
            .collect();
        Self {
            chain_id,
            samples,
            log_posterior: evaluated.iter().map(|e| e.0).collect(),
            log_prior: evaluated.iter().map(|e| e.1).collect(),
            failed: evaluated.iter().map(|e| e.2).collect(),
            wall_time,
            stats,
        }
    }
}

/// How chain starting points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// One draw from the disturbance prior.
    Prior,
    /// Best point of a short particle swarm search on the smoothed posterior.
    Pso,
}

/// Runs NUTS on a scenario's smoothed posterior from `init`.
///
/// Failure flags are recomputed from a fresh rollout of every reported draw.
pub fn run_chain<S: Scenario + ?Sized>(
    scenario: &S,
    smoothing: &SmoothingConfig,
    cfg: &NutsConfig,
    init: &[f64],
    seed: u64,
    chain_id: usize,
) -> Result<SampleBatch> {
    if init.len() != scenario.dimension() {
        return Err(Error::Dimension {
            expected: scenario.dimension(),
            got: init.len(),
        });
    }
    let start = Instant::now();
    let posterior = Posterior::new(scenario, *smoothing);
    let mut sampler = NutsSampler::new(&posterior, cfg.clone(), init, seed, chain_id as u64)?;
    let draws = sampler.run();
    Ok(SampleBatch::from_draws(
        scenario,
        smoothing,
        chain_id,
        draws.positions,
        start.elapsed().as_secs_f64(),
        draws.stats,
    ))
}

/// Starting point for chain `chain_id`.
pub fn initial_point<S: Scenario + ?Sized>(
    scenario: &S,
    smoothing: &SmoothingConfig,
    strategy: InitStrategy,
    seed: u64,
    chain_id: usize,
) -> Vec<f64> {
    let mut rng = stream_rng(seed, INIT_STREAM + chain_id as u64);
    match strategy {
        InitStrategy::Prior => scenario.prior().sample(&mut rng),
        InitStrategy::Pso => pso_init(scenario, smoothing, &PsoConfig::default(), &mut rng),
    }
}

/// Independent NUTS chains, run in parallel and returned in chain order.
///
/// A failing chain yields its error without affecting the others.
pub fn run_multichain<S: Scenario + ?Sized>(
    scenario: &S,
    smoothing: &SmoothingConfig,
    cfg: &NutsConfig,
    n_chains: usize,
    init: InitStrategy,
    seed: u64,
) -> Vec<Result<SampleBatch>> {
    with_thread_pool(|| {
        (0..n_chains)
            .into_par_iter()
            .map(|c| {
                let x0 = initial_point(scenario, smoothing, init, seed, c);
                run_chain(scenario, smoothing, cfg, &x0, seed, c)
            })
            .collect()
    })
}

/// Numerically stable `ln(e^a + e^b)`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(7, 0).gen();
        let b: u64 = stream_rng(7, 1).gen();
        let c: u64 = stream_rng(7, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}

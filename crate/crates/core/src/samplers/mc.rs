//! Direct Monte Carlo: i.i.d. prior draws, each rolled out once.

use std::time::Instant;

use rayon::prelude::*;

use super::{stream_rng, with_thread_pool, ChainStats, SampleBatch};
use crate::scenario::{Scenario, SmoothingConfig};

/// Draws per RNG stream. Fixed so results do not depend on the thread count.
const BLOCK: usize = 4096;

/// `n` prior draws; draw `i` comes from stream `i / 4096` of `seed`.
pub fn direct_mc<S: Scenario + ?Sized>(
    scenario: &S,
    smoothing: &SmoothingConfig,
    n: usize,
    seed: u64,
) -> SampleBatch {
    let start = Instant::now();
    let prior = scenario.prior();
    let samples: Vec<Vec<f64>> = with_thread_pool(|| {
        (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .flat_map_iter(|b| {
                let mut rng = stream_rng(seed, b as u64);
                let len = BLOCK.min(n - b * BLOCK);
                (0..len).map(move |_| prior.sample(&mut rng))
            })
            .collect()
    });
    let mut batch = with_thread_pool(|| {
        SampleBatch::from_draws(scenario, smoothing, 0, samples, 0.0, ChainStats::default())
    });
    batch.wall_time = start.elapsed().as_secs_f64();
    batch.stats.mean_accept = 1.0;
    batch
}

//! No-U-Turn sampler: multinomial trajectory sampling with recursive tree doubling, the
//! dot-product U-turn criterion (checked on every merged subtree and across subtree seams),
//! Nesterov dual-averaging step-size adaptation and optional diagonal mass adaptation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{log_add_exp, stream_rng, ChainStats, LogDensity};
use crate::error::{Error, Result};
use crate::scenario::DiagonalGaussian;

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NutsConfig {
    /// Reported draws per chain.
    pub n_samples: usize,
    /// Warmup iterations, discarded.
    pub n_adapt: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Diagonal of the mass matrix; identity when `None`.
    pub mass_matrix: Option<Vec<f64>>,
    /// Re-estimate the diagonal mass from the middle half of warmup.
    pub adapt_mass: bool,
    /// Starting step size; found heuristically when `None`.
    pub initial_step_size: Option<f64>,
}

impl NutsConfig {
    /// `n_samples` reported draws after an equal number of warmup iterations.
    pub fn new(n_samples: usize) -> Self {
        Self {
            n_samples,
            n_adapt: n_samples,
            target_accept: 0.8,
            max_tree_depth: 10,
            mass_matrix: None,
            adapt_mass: false,
            initial_step_size: None,
        }
    }

    /// Uses the prior precision as the mass matrix, so momenta match the prior's scales.
    pub fn with_prior_mass(mut self, prior: &DiagonalGaussian) -> Self {
        self.mass_matrix = Some(prior.std().iter().map(|s| 1.0 / (s * s)).collect());
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidConfig(
                "max_tree_depth must be at least 1".into(),
            ));
        }
        if let Some(m) = &self.mass_matrix {
            if m.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: m.len(),
                });
            }
            if !m.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(
                    "mass matrix entries must be positive".into(),
                ));
            }
        }
        if let Some(e) = self.initial_step_size {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "initial step size {e} is not positive"
                )));
            }
        }
        Ok(())
    }
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self::new(1000)
    }
}

/// Nesterov dual averaging of `log(step)` toward a target acceptance statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    /// Running average of `target - accept`.
    pub h_bar: f64,
    /// Averaged log step size, used after warmup.
    pub log_step_bar: f64,
    pub mu: f64,
    pub iteration: usize,
    pub target: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl DualAveraging {
    pub fn new(step: f64, target: f64) -> Self {
        Self {
            h_bar: 0.0,
            log_step_bar: 0.0,
            mu: (10.0 * step).ln(),
            iteration: 0,
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    /// Folds in one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept: f64) -> f64 {
        let accept = if accept.is_nan() {
            0.0
        } else {
            accept.min(1.0)
        };
        self.iteration += 1;
        let m = self.iteration as f64;
        let eta = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        let log_step = self.mu - self.h_bar * m.sqrt() / self.gamma;
        let w = m.powf(-self.kappa);
        self.log_step_bar = w * log_step + (1.0 - w) * self.log_step_bar;
        log_step.exp()
    }

    /// Step size frozen for sampling.
    pub fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Position, momentum and cached log density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let (log_density, grad) = target.log_density_and_grad(&q)?;
        Ok(Self {
            q,
            p,
            grad,
            log_density,
        })
    }

    fn is_finite(&self) -> bool {
        self.log_density.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// One leapfrog step under a diagonal inverse mass. `None` marks a divergence: the log
/// density or its gradient failed or became non-finite.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    z: &PhasePoint,
    step: f64,
    inv_mass: &[f64],
) -> Option<PhasePoint> {
    let half: Vec<f64> =
        z.p.iter()
            .zip(&z.grad)
            .map(|(p, g)| p + 0.5 * step * g)
            .collect();
    let q: Vec<f64> =
        z.q.iter()
            .zip(&half)
            .zip(inv_mass)
            .map(|((q, p), m)| q + step * m * p)
            .collect();
    let (log_density, grad) = target.log_density_and_grad(&q).ok()?;
    let p = half
        .iter()
        .zip(&grad)
        .map(|(p, g)| p + 0.5 * step * g)
        .collect();
    let next = PhasePoint {
        q,
        p,
        grad,
        log_density,
    };
    next.is_finite().then_some(next)
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

fn hamiltonian(z: &PhasePoint, inv_mass: &[f64]) -> f64 {
    -z.log_density + kinetic(&z.p, inv_mass)
}

fn sharp(p: &[f64], inv_mass: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a + b).collect()
}

/// No U-turn between the two ends of a trajectory segment with summed momentum `rho`.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Outcome of one NUTS transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept: f64,
    pub divergent: bool,
    pub depth: usize,
    pub n_leapfrog: usize,
}

/// Everything a chain needs to resume: position, step size, adaptation state and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub step_size: f64,
    pub dual_averaging: DualAveraging,
    pub rng_seed: u64,
}

/// Reported draws of one chain.
#[derive(Debug, Clone)]
pub struct Draws {
    pub positions: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub stats: ChainStats,
}

/// Mutable state threaded through one tree expansion.
struct Walk<'a, T: ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    step: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_accept: f64,
    divergent: bool,
}

/// Boundary momenta of a subtree: `beg` is the end nearest the starting point.
struct Ends {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    sharp_beg: Vec<f64>,
    sharp_end: Vec<f64>,
}

impl<T: LogDensity + ?Sized> Walk<'_, T> {
    /// Extends the trajectory by `2^depth` leapfrog steps from `z` in direction `sign`.
    /// Returns `None` if the subtree diverged or contains a U-turn, in which case it must
    /// not be used.
    #[allow(clippy::too_many_arguments)]
    fn build_tree<G: Rng>(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        propose: &mut PhasePoint,
        rho: &mut [f64],
        log_sum_weight: &mut f64,
        sign: f64,
        rng: &mut G,
    ) -> Option<Ends> {
        if depth == 0 {
            self.n_leapfrog += 1;
            let Some(next) = leapfrog(self.target, z, sign * self.step, self.inv_mass) else {
                self.divergent = true;
                return None;
            };
            *z = next;
            let h = hamiltonian(z, self.inv_mass);
            let h = if h.is_nan() { f64::INFINITY } else { h };
            if h - self.h0 > MAX_ENERGY_ERROR {
                self.divergent = true;
                return None;
            }
            let log_w = self.h0 - h;
            *log_sum_weight = log_add_exp(*log_sum_weight, log_w);
            self.sum_accept += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            *propose = z.clone();
            add_assign(rho, &z.p);
            let s = sharp(&z.p, self.inv_mass);
            return Some(Ends {
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                sharp_beg: s.clone(),
                sharp_end: s,
            });
        }

        let dim = z.q.len();
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        let init = self.build_tree(
            depth - 1,
            z,
            propose,
            &mut rho_init,
            &mut lsw_init,
            sign,
            rng,
        )?;

        let mut propose_final = z.clone();
        let mut rho_final = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        let fin = self.build_tree(
            depth - 1,
            z,
            &mut propose_final,
            &mut rho_final,
            &mut lsw_final,
            sign,
            rng,
        )?;

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.gen::<f64>() < (lsw_final - lsw_subtree).exp() {
            *propose = propose_final;
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_assign(rho, &rho_subtree);
        let persist = no_u_turn(&init.sharp_beg, &fin.sharp_end, &rho_subtree)
            && no_u_turn(&init.sharp_beg, &fin.sharp_beg, &sum(&rho_init, &fin.p_beg))
            && no_u_turn(
                &init.sharp_end,
                &fin.sharp_end,
                &sum(&rho_final, &init.p_end),
            );
        persist.then_some(Ends {
            p_beg: init.p_beg,
            p_end: fin.p_end,
            sharp_beg: init.sharp_beg,
            sharp_end: fin.sharp_end,
        })
    }
}

/// A single NUTS chain over a [`LogDensity`].
pub struct NutsSampler<'a, T: ?Sized> {
    target: &'a T,
    cfg: NutsConfig,
    inv_mass: Vec<f64>,
    current: PhasePoint,
    step: f64,
    adaptation: DualAveraging,
    rng: ChaCha8Rng,
    seed: u64,
}

impl<'a, T: LogDensity + ?Sized> NutsSampler<'a, T> {
    /// Chain on stream `stream` of master seed `seed`.
    pub fn new(
        target: &'a T,
        cfg: NutsConfig,
        init: &[f64],
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let dim = target.dim();
        if init.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: init.len(),
            });
        }
        cfg.validate(dim)?;
        let current = PhasePoint::new(target, init.to_vec(), vec![0.0; dim])
            .map_err(|_| Error::NonFiniteStart)?;
        if !current.is_finite() {
            return Err(Error::NonFiniteStart);
        }
        let inv_mass = match &cfg.mass_matrix {
            Some(m) => m.iter().map(|m| 1.0 / m).collect(),
            None => vec![1.0; dim],
        };
        let mut sampler = Self {
            target,
            adaptation: DualAveraging::new(1.0, cfg.target_accept),
            cfg,
            inv_mass,
            current,
            step: 1.0,
            rng: stream_rng(seed, stream),
            seed,
        };
        sampler.step = match sampler.cfg.initial_step_size {
            Some(e) => e,
            None => sampler.find_reasonable_step(1.0),
        };
        sampler.adaptation = DualAveraging::new(sampler.step, sampler.cfg.target_accept);
        Ok(sampler)
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// Overrides the step size, e.g. when driving adaptation externally.
    pub fn set_step_size(&mut self, step: f64) {
        assert!(step > 0.0 && step.is_finite(), "step size must be positive");
        self.step = step;
    }

    pub fn inv_mass(&self) -> &[f64] {
        &self.inv_mass
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            position: self.current.q.clone(),
            step_size: self.step,
            dual_averaging: self.adaptation.clone(),
            rng_seed: self.seed,
        }
    }

    fn sample_momentum(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        self.inv_mass
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect()
    }

    /// Doubles or halves `step` until one leapfrog step's acceptance ratio crosses 1/2.
    fn find_reasonable_step(&mut self, start: f64) -> f64 {
        let mut step = start;
        let p = self.sample_momentum();
        let z0 = PhasePoint {
            p,
            ..self.current.clone()
        };
        let h0 = hamiltonian(&z0, &self.inv_mass);
        let log_ratio = |step: f64| match leapfrog(self.target, &z0, step, &self.inv_mass) {
            Some(z) => {
                let r = h0 - hamiltonian(&z, &self.inv_mass);
                if r.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    r
                }
            }
            None => f64::NEG_INFINITY,
        };
        let mut r = log_ratio(step);
        let direction = if r > -std::f64::consts::LN_2 {
            1.0
        } else {
            -1.0
        };
        for _ in 0..100 {
            if direction * r <= -direction * std::f64::consts::LN_2 {
                break;
            }
            let next = step * 2f64.powf(direction);
            if !(1e-12..=1e6).contains(&next) {
                break;
            }
            step = next;
            r = log_ratio(step);
        }
        step
    }

    /// One NUTS transition from the current point at the current step size.
    pub fn transition(&mut self) -> TransitionStats {
        let p0 = self.sample_momentum();
        let z0 = PhasePoint {
            p: p0,
            ..self.current.clone()
        };
        let h0 = hamiltonian(&z0, &self.inv_mass);
        let mut walk = Walk {
            target: self.target,
            inv_mass: &self.inv_mass,
            step: self.step,
            h0,
            n_leapfrog: 0,
            sum_accept: 0.0,
            divergent: false,
        };

        // Momenta at the forward and backward ends of the whole trajectory.
        let sharp0 = sharp(&z0.p, &self.inv_mass);
        let (mut p_fwd, mut sharp_fwd) = (z0.p.clone(), sharp0.clone());
        let (mut p_bck, mut sharp_bck) = (z0.p.clone(), sharp0);
        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut sample = z0.clone();
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < self.cfg.max_tree_depth {
            let forward = self.rng.gen::<f64>() > 0.5;
            let (edge, sign) = if forward {
                (&mut z_fwd, 1.0)
            } else {
                (&mut z_bck, -1.0)
            };
            let mut propose = edge.clone();
            let mut rho_new = vec![0.0; rho.len()];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let Some(new) = walk.build_tree(
                depth,
                edge,
                &mut propose,
                &mut rho_new,
                &mut lsw_subtree,
                sign,
                &mut self.rng,
            ) else {
                break;
            };
            depth += 1;

            if lsw_subtree > log_sum_weight
                || self.rng.gen::<f64>() < (lsw_subtree - log_sum_weight).exp()
            {
                sample = propose;
            }
            log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

            // The old trajectory's end touching the new subtree, and its far end.
            let (p_adj, sharp_adj, sharp_far) = if forward {
                (&p_fwd, &sharp_fwd, &sharp_bck)
            } else {
                (&p_bck, &sharp_bck, &sharp_fwd)
            };
            let rho_total = sum(&rho, &rho_new);
            let persist = no_u_turn(sharp_far, &new.sharp_end, &rho_total)
                && no_u_turn(sharp_far, &new.sharp_beg, &sum(&rho, &new.p_beg))
                && no_u_turn(sharp_adj, &new.sharp_end, &sum(&rho_new, p_adj));
            rho = rho_total;
            if forward {
                p_fwd = new.p_end;
                sharp_fwd = new.sharp_end;
            } else {
                p_bck = new.p_end;
                sharp_bck = new.sharp_end;
            }
            if !persist {
                break;
            }
        }

        let accept = if walk.n_leapfrog == 0 {
            0.0
        } else {
            walk.sum_accept / walk.n_leapfrog as f64
        };
        let stats = TransitionStats {
            accept,
            divergent: walk.divergent,
            depth,
            n_leapfrog: walk.n_leapfrog,
        };
        self.current = sample;
        stats
    }

    /// Warmup followed by `n_samples` reported draws.
    pub fn run(&mut self) -> Draws {
        let n_adapt = self.cfg.n_adapt;
        let (window_start, window_end) = (n_adapt / 4, 3 * n_adapt / 4);
        let adapt_mass = self.cfg.adapt_mass && window_end - window_start >= 10;
        let mut welford = Welford::new(self.target.dim());
        let mut stats = ChainStats::default();

        for i in 0..n_adapt {
            let t = self.transition();
            stats.gradient_evals += t.n_leapfrog;
            stats.warmup_divergences += usize::from(t.divergent);
            self.step = self.adaptation.update(t.accept);
            if adapt_mass && (window_start..window_end).contains(&i) {
                welford.push(&self.current.q);
                if i + 1 == window_end {
                    self.inv_mass = welford.regularized_variance();
                    self.step = self.find_reasonable_step(self.step);
                    self.adaptation = DualAveraging::new(self.step, self.cfg.target_accept);
                }
            }
        }
        if n_adapt > 0 {
            self.step = self.adaptation.final_step();
        }

        let n = self.cfg.n_samples;
        let mut positions = Vec::with_capacity(n);
        let mut log_density = Vec::with_capacity(n);
        let (mut sum_accept, mut sum_depth) = (0.0, 0usize);
        for _ in 0..n {
            let t = self.transition();
            stats.gradient_evals += t.n_leapfrog;
            stats.divergences += usize::from(t.divergent);
            sum_accept += t.accept;
            sum_depth += t.depth;
            positions.push(self.current.q.clone());
            log_density.push(self.current.log_density);
        }
        if n > 0 {
            stats.mean_accept = sum_accept / n as f64;
            stats.mean_tree_depth = sum_depth as f64 / n as f64;
        }
        stats.step_size = self.step;
        Draws {
            positions,
            log_density,
            stats,
        }
    }
}

/// Streaming per-coordinate mean and variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk toward `1e-3`, as an inverse mass.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0).max(1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

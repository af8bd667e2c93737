//! C ABI over the failprob scenarios, gradients and samplers.
//!
//! Objects are opaque handles created by `*_new` and released by the matching `*_free`.
//! Every fallible call returns an [`FpStatus`]; on failure, [`fp_last_error`] describes the
//! problem until the next failing call on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use failprob::cli::{self, ExperimentConfig, InitChoice, Method, ScenarioKind};
use failprob::environments::{Crosswalk, Lander, Pendulum, Toy};
use failprob::metrics::{mean_dispersion, DispersionGrid};
use failprob::scenario::{log_posterior_and_grad, rollout, Scenario, SmoothingConfig};
use failprob::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Numerical failure inside a rollout, gradient or sampler.
    ComputationFailed = 4,
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpScenarioKind {
    Toy = 0,
    Pendulum = 1,
    Crosswalk = 2,
    Lander = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpMethod {
    Hmc = 0,
    Pg = 1,
    Mc = 2,
}

/// Settings for [`fp_run_new`]. Zero-valued fields take the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpRunConfig {
    pub scenario: FpScenarioKind,
    pub method: FpMethod,
    pub chains: usize,
    /// Reported draws per chain (HMC) or sweeps per chain (PG).
    pub samples: usize,
    /// Direct Monte Carlo draws.
    pub mc_draws: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Start chains from a particle swarm search instead of a prior draw.
    pub pso_init: bool,
    pub particles: usize,
}

enum AnyScenario {
    Toy(Toy),
    Pendulum(Pendulum),
    Crosswalk(Crosswalk),
    Lander(Lander),
}

macro_rules! dispatch {
    ($s:expr, $v:ident => $body:expr) => {
        match $s {
            AnyScenario::Toy($v) => $body,
            AnyScenario::Pendulum($v) => $body,
            AnyScenario::Crosswalk($v) => $body,
            AnyScenario::Lander($v) => $body,
        }
    };
}

/// A scenario with default parameters.
pub struct FpScenario(AnyScenario);

/// Draws and metrics of a finished sampler run.
pub struct FpRun(cli::RunOutput);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: FpStatus, msg: impl AsRef<str>) -> FpStatus {
    set_error(msg.as_ref());
    status
}

fn from_error(e: &Error) -> FpStatus {
    let status = match e {
        Error::Dimension { .. } | Error::Shape(_) => FpStatus::DimensionMismatch,
        Error::InvalidConfig(_) | Error::Parse { .. } => FpStatus::InvalidArgument,
        _ => FpStatus::ComputationFailed,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`FpStatus::Panic`].
fn guard(f: impl FnOnce() -> FpStatus) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(FpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// Borrows `len` doubles at `ptr`; a null pointer is allowed only when `len == 0`.
unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Message for the last failing call on this thread; empty if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version string"),
        };
    VERSION.as_ptr()
}

/// Creates a default-parameter scenario.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fp_scenario_new(
    kind: FpScenarioKind,
    out: *mut *mut FpScenario,
) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        let s = match kind {
            FpScenarioKind::Toy => AnyScenario::Toy(Toy::default()),
            FpScenarioKind::Pendulum => AnyScenario::Pendulum(Pendulum::with_cloned_policy()),
            FpScenarioKind::Crosswalk => AnyScenario::Crosswalk(Crosswalk::default()),
            FpScenarioKind::Lander => AnyScenario::Lander(Lander::default()),
        };
        *out = Box::into_raw(Box::new(FpScenario(s)));
        FpStatus::Ok
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `s` must come from [`fp_scenario_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fp_scenario_free(s: *mut FpScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Length of the scenario's disturbance vector; 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fp_scenario_dimension(s: *const FpScenario) -> usize {
    s.as_ref()
        .map_or(0, |s| dispatch!(&s.0, sc => sc.dimension()))
}

/// Smoothing variance tuned for the scenario; NaN for a null handle.
///
/// # Safety
/// `s` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fp_scenario_default_epsilon(s: *const FpScenario) -> f64 {
    s.as_ref()
        .map_or(f64::NAN, |s| dispatch!(&s.0, sc => sc.default_epsilon()))
}

/// Simulates one disturbance vector. Writes the clipped distance to failure, the prior
/// log-density and the failure flag; any output pointer may be null.
///
/// # Safety
/// `x` must point to `len` doubles; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_rollout(
    s: *const FpScenario,
    x: *const f64,
    len: usize,
    distance: *mut f64,
    log_prior: *mut f64,
    failed: *mut bool,
) -> FpStatus {
    guard(|| {
        let (Some(s), Some(x)) = (s.as_ref(), slice(x, len)) else {
            return fail(FpStatus::NullPointer, "scenario or x is null");
        };
        let dim = dispatch!(&s.0, sc => sc.dimension());
        if len != dim {
            return from_error(&Error::Dimension {
                expected: dim,
                got: len,
            });
        }
        let r = dispatch!(&s.0, sc => rollout(sc, x));
        if let Some(d) = distance.as_mut() {
            *d = r.distance;
        }
        if let Some(l) = log_prior.as_mut() {
            *l = r.log_prior;
        }
        if let Some(f) = failed.as_mut() {
            *f = r.failed;
        }
        FpStatus::Ok
    })
}

/// Smoothed log-posterior at `x` and its gradient, written to `grad` (`len` doubles).
///
/// # Safety
/// `x` and `grad` must each point to `len` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_log_posterior_grad(
    s: *const FpScenario,
    epsilon: f64,
    x: *const f64,
    len: usize,
    value: *mut f64,
    grad: *mut f64,
) -> FpStatus {
    guard(|| {
        let (Some(s), Some(x)) = (s.as_ref(), slice(x, len)) else {
            return fail(FpStatus::NullPointer, "scenario or x is null");
        };
        if value.is_null() || (grad.is_null() && len > 0) {
            return fail(FpStatus::NullPointer, "value or grad is null");
        }
        let smoothing = match SmoothingConfig::new(epsilon) {
            Ok(c) => c,
            Err(e) => return from_error(&e),
        };
        match dispatch!(&s.0, sc => log_posterior_and_grad(sc, &smoothing, x)) {
            Ok((v, g)) => {
                *value = v;
                if len > 0 {
                    std::slice::from_raw_parts_mut(grad, len).copy_from_slice(&g.into_vec());
                }
                FpStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Coverage score of `n` 2-D points (row-major, in the unit square) on a `cells × cells`
/// grid. Writes the score to `out`.
///
/// # Safety
/// `points` must point to `2 n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_mean_dispersion(
    points: *const f64,
    n: usize,
    cells: usize,
    out: *mut f64,
) -> FpStatus {
    guard(|| {
        let Some(flat) = slice(points, 2 * n) else {
            return fail(FpStatus::NullPointer, "points is null");
        };
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        if cells == 0 {
            return fail(FpStatus::InvalidArgument, "cells must be positive");
        }
        let pts: Vec<Vec<f64>> = flat.chunks(2).map(<[f64]>::to_vec).collect();
        *out = mean_dispersion(&pts, &DispersionGrid::unit_square(cells));
        FpStatus::Ok
    })
}

fn resolve(cfg: &FpRunConfig) -> Result<ExperimentConfig, Error> {
    let scenario = match cfg.scenario {
        FpScenarioKind::Toy => ScenarioKind::Toy,
        FpScenarioKind::Pendulum => ScenarioKind::Pendulum,
        FpScenarioKind::Crosswalk => ScenarioKind::Crosswalk,
        FpScenarioKind::Lander => ScenarioKind::Lander,
    };
    let method = match cfg.method {
        FpMethod::Hmc => Method::Hmc,
        FpMethod::Pg => Method::Pg,
        FpMethod::Mc => Method::Mc,
    };
    let nonzero = |v: usize| (v > 0).then_some(v);
    cli::ConfigOverrides {
        scenario: Some(scenario),
        method: Some(method),
        chains: nonzero(cfg.chains),
        samples: nonzero(cfg.samples),
        mc_draws: nonzero(cfg.mc_draws),
        epsilon: (cfg.epsilon != 0.0).then_some(cfg.epsilon),
        seed: Some(cfg.seed),
        init: Some(if cfg.pso_init {
            InitChoice::Pso
        } else {
            InitChoice::Prior
        }),
        particles: nonzero(cfg.particles),
        ..Default::default()
    }
    .resolve()
}

/// Runs a sampler. Chains that fail are dropped; the call fails only if all do.
///
/// # Safety
/// `cfg` must point to a valid config; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_run_new(cfg: *const FpRunConfig, out: *mut *mut FpRun) -> FpStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(FpStatus::NullPointer, "cfg or out is null");
        };
        match resolve(cfg).and_then(|c| cli::execute(&c)) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(FpRun(r)));
                FpStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must come from [`fp_run_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fp_run_free(run: *mut FpRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Total reported draws over all chains; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fp_run_num_draws(run: *const FpRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.metrics.n_samples)
}

/// Number of failing draws; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fp_run_num_failures(run: *const FpRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.metrics.n_failures)
}

/// Coverage score of the run's failures; NaN for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fp_run_dispersion(run: *const FpRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.metrics.c_disp)
}

/// Copies draw `index` (chains concatenated in order) into `x` (`len` doubles) and writes
/// its chain, failure flag and prior log-density; output pointers other than `x` may be
/// null.
///
/// # Safety
/// `x` must point to `len` writable doubles; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_run_draw(
    run: *const FpRun,
    index: usize,
    x: *mut f64,
    len: usize,
    chain: *mut usize,
    failed: *mut bool,
    log_prior: *mut f64,
) -> FpStatus {
    guard(|| {
        let Some(run) = run.as_ref() else {
            return fail(FpStatus::NullPointer, "run is null");
        };
        if x.is_null() && len > 0 {
            return fail(FpStatus::NullPointer, "x is null");
        }
        if len != run.0.dimension {
            return from_error(&Error::Dimension {
                expected: run.0.dimension,
                got: len,
            });
        }
        let mut i = index;
        for b in &run.0.batches {
            if i < b.len() {
                if len > 0 {
                    ptr::copy_nonoverlapping(b.samples[i].as_ptr(), x, len);
                }
                if let Some(c) = chain.as_mut() {
                    *c = b.chain_id;
                }
                if let Some(f) = failed.as_mut() {
                    *f = b.failed[i];
                }
                if let Some(l) = log_prior.as_mut() {
                    *l = b.log_prior[i];
                }
                return FpStatus::Ok;
            }
            i -= b.len();
        }
        fail(FpStatus::OutOfRange, format!("draw {index} out of range"))
    })
}

#ifndef FAILPROB_H
#define FAILPROB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FpMethod {
  FP_METHOD_HMC = 0,
  FP_METHOD_PG = 1,
  FP_METHOD_MC = 2,
} FpMethod;

typedef enum FpScenarioKind {
  FP_SCENARIO_KIND_TOY = 0,
  FP_SCENARIO_KIND_PENDULUM = 1,
  FP_SCENARIO_KIND_CROSSWALK = 2,
  FP_SCENARIO_KIND_LANDER = 3,
} FpScenarioKind;

// Result of every fallible call.
typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_ARGUMENT = 2,
  FP_STATUS_DIMENSION_MISMATCH = 3,
  // Numerical failure inside a rollout, gradient or sampler.
  FP_STATUS_COMPUTATION_FAILED = 4,
  FP_STATUS_OUT_OF_RANGE = 5,
  FP_STATUS_PANIC = 6,
} FpStatus;

// Draws and metrics of a finished sampler run.
typedef struct FpRun FpRun;

// A scenario with default parameters.
typedef struct FpScenario FpScenario;

// Settings for [`fp_run_new`]. Zero-valued fields take the library defaults.
typedef struct FpRunConfig {
  enum FpScenarioKind scenario;
  enum FpMethod method;
  size_t chains;
  // Reported draws per chain (HMC) or sweeps per chain (PG).
  size_t samples;
  // Direct Monte Carlo draws.
  size_t mc_draws;
  double epsilon;
  uint64_t seed;
  // Start chains from a particle swarm search instead of a prior draw.
  bool pso_init;
  size_t particles;
} FpRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread; empty if none. The pointer stays
// valid until the next failing call on the same thread.
const char *fp_last_error(void);

// Library version as a static NUL-terminated string.
const char *fp_version(void);

// Creates a default-parameter scenario.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum FpStatus fp_scenario_new(enum FpScenarioKind kind, struct FpScenario **out);

// Releases a scenario. Null is ignored.
//
// # Safety
// `s` must come from [`fp_scenario_new`] and not be used afterwards.
void fp_scenario_free(struct FpScenario *s);

// Length of the scenario's disturbance vector; 0 for a null handle.
//
// # Safety
// `s` must be null or a live scenario handle.
size_t fp_scenario_dimension(const struct FpScenario *s);

// Smoothing variance tuned for the scenario; NaN for a null handle.
//
// # Safety
// `s` must be null or a live scenario handle.
double fp_scenario_default_epsilon(const struct FpScenario *s);

// Simulates one disturbance vector. Writes the clipped distance to failure, the prior
// log-density and the failure flag; any output pointer may be null.
//
// # Safety
// `x` must point to `len` doubles; non-null outputs must be writable.
enum FpStatus fp_rollout(const struct FpScenario *s,
                         const double *x,
                         size_t len,
                         double *distance,
                         double *log_prior,
                         bool *failed);

// Smoothed log-posterior at `x` and its gradient, written to `grad` (`len` doubles).
//
// # Safety
// `x` and `grad` must each point to `len` doubles; `value` must be writable.
enum FpStatus fp_log_posterior_grad(const struct FpScenario *s,
                                    double epsilon,
                                    const double *x,
                                    size_t len,
                                    double *value,
                                    double *grad);

// Coverage score of `n` 2-D points (row-major, in the unit square) on a `cells × cells`
// grid. Writes the score to `out`.
//
// # Safety
// `points` must point to `2 n` doubles; `out` must be writable.
enum FpStatus fp_mean_dispersion(const double *points, size_t n, size_t cells, double *out);

// Runs a sampler. Chains that fail are dropped; the call fails only if all do.
//
// # Safety
// `cfg` must point to a valid config; `out` must be writable.
enum FpStatus fp_run_new(const struct FpRunConfig *cfg, struct FpRun **out);

// Releases a run. Null is ignored.
//
// # Safety
// `run` must come from [`fp_run_new`] and not be used afterwards.
void fp_run_free(struct FpRun *run);

// Total reported draws over all chains; 0 for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
size_t fp_run_num_draws(const struct FpRun *run);

// Number of failing draws; 0 for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
size_t fp_run_num_failures(const struct FpRun *run);

// Coverage score of the run's failures; NaN for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
double fp_run_dispersion(const struct FpRun *run);

// Copies draw `index` (chains concatenated in order) into `x` (`len` doubles) and writes
// its chain, failure flag and prior log-density; output pointers other than `x` may be
// null.
//
// # Safety
// `x` must point to `len` writable doubles; non-null outputs must be writable.
enum FpStatus fp_run_draw(const struct FpRun *run,
                          size_t index,
                          double *x,
                          size_t len,
                          size_t *chain,
                          bool *failed,
                          double *log_prior);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAILPROB_H */

#ifndef NANODUMBBELL_H
#define NANODUMBBELL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum NdbStatus {
  NDB_STATUS_OK = 0,
  NDB_STATUS_NULL_POINTER = 1,
  NDB_STATUS_INVALID_UTF8 = 2,
  NDB_STATUS_CONFIG_ERROR = 3,
  NDB_STATUS_RUNTIME_ERROR = 4,
  NDB_STATUS_OUT_OF_RANGE = 5,
  NDB_STATUS_PANIC = 6,
} NdbStatus;

// Resolved run configuration.
typedef struct NdbConfig NdbConfig;

// Results of an ensemble run.
typedef struct NdbEnsemble NdbEnsemble;

// Sampled trajectory.
typedef struct NdbTrajectory NdbTrajectory;

typedef struct NdbDerived {
  double e0;
  double omega;
  double omega_xi;
  double omega_eta;
  double inertia_x;
  double inertia_z;
  double alpha_x;
  double alpha_z;
  double barrier_k;
} NdbDerived;

typedef struct NdbModes {
  double omega_plus;
  double omega_minus;
  double kappa1;
  double kappa2;
  double omega_c;
} NdbModes;

// Euler angles and rates; `t` is the time of the state.
typedef struct NdbState {
  double t;
  double alpha;
  double beta;
  double gamma;
  double alpha_dot;
  double beta_dot;
  double omega3;
} NdbState;

typedef struct NdbEnsembleSummary {
  uintptr_t n;
  uintptr_t completed;
  uintptr_t escaped;
  uintptr_t failed;
  double mean_k;
  double sem_k;
  double initial_mean_k;
  // `NaN` when fewer than the minimum number of samples completed.
  double fit_n0_temperature;
  double fit_n1_temperature;
} NdbEnsembleSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *ndb_last_error(void);

// Library version as a static string.
const char *ndb_version(void);

// Paper-default configuration.
//
// # Safety
// `out` must be a valid pointer.
enum NdbStatus ndb_config_default(struct NdbConfig **out);

// Configuration of a registered scenario, with optional TOML text layered
// on top (`toml` may be null).
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be valid.
enum NdbStatus ndb_config_new(const char *scenario, const char *toml_text, struct NdbConfig **out);

// Applies a dotted `key=value` override and revalidates. The
// configuration is unchanged on failure.
//
// # Safety
// `cfg` must come from this library; `assignment` must be NUL-terminated.
enum NdbStatus ndb_config_set(struct NdbConfig *cfg, const char *assignment);

// Releases a configuration; null is ignored.
//
// # Safety
// `cfg` must be null or come from this library and not be used again.
void ndb_config_free(struct NdbConfig *cfg);

// Physical quantities implied by the configuration.
//
// # Safety
// Pointers must be valid.
enum NdbStatus ndb_config_derived(const struct NdbConfig *cfg, struct NdbDerived *out);

// Normal-mode frequencies of the linearized motion at spin `omega3`.
//
// # Safety
// Pointers must be valid.
enum NdbStatus ndb_normal_modes(const struct NdbConfig *cfg, double omega3, struct NdbModes *out);

// Thermal initial state number `index` of the configured ensemble.
//
// # Safety
// Pointers must be valid.
enum NdbStatus ndb_thermal_state(const struct NdbConfig *cfg, uint64_t index, struct NdbState *out);

// Shifted energy of a state (K).
//
// # Safety
// Pointers must be valid.
enum NdbStatus ndb_energy_kelvin(const struct NdbConfig *cfg,
                                 const struct NdbState *state,
                                 double *out);

// Integrates the full dynamics from `state` for `duration` seconds with
// the configured feedback (noise off), sampling every `sample_dt`.
//
// # Safety
// Pointers must be valid.
enum NdbStatus ndb_integrate(const struct NdbConfig *cfg,
                             const struct NdbState *state,
                             double duration,
                             double sample_dt,
                             struct NdbTrajectory **out);

// Number of samples; 0 for null.
//
// # Safety
// `traj` must be null or come from this library.
uintptr_t ndb_trajectory_len(const struct NdbTrajectory *traj);

// Whether the run stopped early because the particle escaped.
//
// # Safety
// `traj` must be null or come from this library.
bool ndb_trajectory_escaped(const struct NdbTrajectory *traj);

// Sample `i`: state and shifted energy (K). Either output may be null.
//
// # Safety
// `traj` must come from this library; outputs must be null or valid.
enum NdbStatus ndb_trajectory_sample(const struct NdbTrajectory *traj,
                                     uintptr_t i,
                                     struct NdbState *state,
                                     double *energy_k);

// # Safety
// `traj` must be null or come from this library and not be used again.
void ndb_trajectory_free(struct NdbTrajectory *traj);

// Runs the configured ensemble (parallel, deterministic per seed).
//
// # Safety
// Pointers must be valid.
enum NdbStatus ndb_run_ensemble(const struct NdbConfig *cfg, struct NdbEnsemble **out);

// # Safety
// Pointers must be valid.
enum NdbStatus ndb_ensemble_summary(const struct NdbEnsemble *ens, struct NdbEnsembleSummary *out);

// Copies final energies (K, index order; `NaN` for runs that did not
// complete) into `buf`. `written` receives the number copied, which is
// `min(cap, n)`.
//
// # Safety
// `buf` must hold `cap` doubles; `written` must be valid.
enum NdbStatus ndb_ensemble_final_energies(const struct NdbEnsemble *ens,
                                           double *buf,
                                           uintptr_t cap,
                                           uintptr_t *written);

// # Safety
// `ens` must be null or come from this library and not be used again.
void ndb_ensemble_free(struct NdbEnsemble *ens);

// Parses a feedback signal name (`xi`, `eta`, `sum`, `py`, `off`) and sets
// it on the configuration.
//
// # Safety
// `cfg` must come from this library; `name` must be NUL-terminated.
enum NdbStatus ndb_config_set_signal(struct NdbConfig *cfg, const char *name);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NANODUMBBELL_H */

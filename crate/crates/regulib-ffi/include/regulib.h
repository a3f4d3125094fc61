/* C interface to the regulib adaptive regulator toolkit. */

#ifndef REGULIB_H
#define REGULIB_H

/* Generated from the Rust sources by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call that reports through a status code.
 */
typedef enum RegStatus {
  /**
   * The call succeeded.
   */
  REG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  REG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  REG_STATUS_INVALID_UTF8 = 2,
  /**
   * The input was rejected; reg_last_error has the reason.
   */
  REG_STATUS_CONFIG_ERROR = 3,
  /**
   * The library failed internally; reg_last_error has the reason.
   */
  REG_STATUS_PANICKED = 4,
} RegStatus;

/**
 * A registry scenario plus the overrides applied to it so far.
 */
typedef struct RegScenario RegScenario;

/**
 * A finished closed-loop run: the scenario that produced it and the full
 * trajectory on the fixed grid.
 */
typedef struct RegSim RegSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string. Do not free.
 */
const char *reg_version(void);

/**
 * Message for the most recent failure on the calling thread, or null when
 * the last call succeeded. Valid until the next library call on the same
 * thread. Do not free.
 */
const char *reg_last_error(void);

/**
 * Known scenario names and one-line summaries as a JSON array of
 * {"name", "summary"} objects. Free with reg_string_free.
 */
char *reg_registry_json(void);

/**
 * Builds a scenario from its registry name, or returns null when the name
 * is unknown. Free with reg_scenario_free.
 *
 * # Safety
 * `name` must be null or point to a NUL terminated string that stays valid
 * for the duration of the call.
 */
struct RegScenario *reg_scenario_new(const char *name);

/**
 * Applies one override document in the run-config grammar, for example
 * "k = 2.0" or "w0 = [1.0, 0.0]". A document may set several keys; later
 * calls overlay earlier ones field by field, and the rebuilt scenario is
 * validated before the handle changes, so a rejected document leaves the
 * handle as it was.
 *
 * # Safety
 * `sc` must be null or a live pointer from reg_scenario_new; `assignment`
 * must be null or a NUL terminated string valid for the call.
 */
enum RegStatus reg_scenario_set(struct RegScenario *sc, const char *assignment);

/**
 * Registry name behind the handle. Free with reg_string_free.
 *
 * # Safety
 * `sc` must be null or a live pointer from reg_scenario_new.
 */
char *reg_scenario_name(const struct RegScenario *sc);

/**
 * Every effective parameter after defaults and overrides, as JSON; a run
 * is reproducible from this echo alone. Free with reg_string_free.
 *
 * # Safety
 * `sc` must be null or a live pointer from reg_scenario_new.
 */
char *reg_scenario_params_json(const struct RegScenario *sc);

/**
 * Releases a scenario handle. Null is allowed.
 *
 * # Safety
 * `sc` must be null or a pointer from reg_scenario_new that has not been
 * freed already; it is invalid after the call.
 */
void reg_scenario_free(struct RegScenario *sc);

/**
 * Integrates the closed loop over the scenario's fixed grid. Divergence is
 * data on the returned handle, not a failure; null means the setup was
 * rejected before integration. Free with reg_sim_free.
 *
 * # Safety
 * `sc` must be null or a live pointer from reg_scenario_new.
 */
struct RegSim *reg_simulate(const struct RegScenario *sc);

/**
 * Number of grid samples, zero for a null handle.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
size_t reg_sim_len(const struct RegSim *sim);

/**
 * State dimension of every sample, zero for a null handle.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
size_t reg_sim_dim(const struct RegSim *sim);

/**
 * Grid times, length reg_sim_len. Borrowed from the handle; valid while
 * the handle lives, do not free.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
const double *reg_sim_times(const struct RegSim *sim);

/**
 * One state sample of length reg_sim_dim, or null when the index is out of
 * range. Borrowed from the handle; valid while the handle lives, do not
 * free.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
const double *reg_sim_state(const struct RegSim *sim, size_t idx);

/**
 * Comma separated component labels in state order, for example
 * "rho_1,w_1,w_2,...". Free with reg_string_free.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
char *reg_sim_labels(const struct RegSim *sim);

/**
 * True when the run tripped the divergence guard and stopped early.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
bool reg_sim_diverged(const struct RegSim *sim);

/**
 * First grid time at which the state sup norm crossed the divergence
 * bound, NaN for a run that completed.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
double reg_sim_divergence_time(const struct RegSim *sim);

/**
 * Scalar run metrics (sup norms, terminal error, settle time, parameter
 * error, dead-zone activity, regulated flag) as JSON. Free with
 * reg_string_free.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate.
 */
char *reg_sim_metrics_json(const struct RegSim *sim);

/**
 * Builds the named report blocks ("pe", "graph", "limit_set", "decay",
 * "lyapunov", comma separated) anchored at the run's terminal state and
 * returns them as one JSON object. Fails on unknown names and on a
 * diverged run, whose terminal state anchors nothing. Free with
 * reg_string_free.
 *
 * # Safety
 * `sim` must be null or a live pointer from reg_simulate; `analyses` must
 * be null or a NUL terminated string valid for the call.
 */
char *reg_sim_analyses_json(const struct RegSim *sim, const char *analyses);

/**
 * Releases a simulation handle and every pointer borrowed from it. Null is
 * allowed.
 *
 * # Safety
 * `sim` must be null or a pointer from reg_simulate that has not been
 * freed already; it and all borrowed pointers are invalid after the call.
 */
void reg_sim_free(struct RegSim *sim);

/**
 * Runs the structural check suite (transform identities on random gains,
 * immersion residuals on attractor samples, excitation, graph invariance)
 * and returns the report as JSON. `pass`, when non-null, receives the
 * overall verdict; a failed check is data, null means the suite could not
 * run. Free with reg_string_free.
 *
 * # Safety
 * `sc` must be null or a live pointer from reg_scenario_new; `pass` must
 * be null or point to writable memory for one bool.
 */
char *reg_verify_json(const struct RegScenario *sc, bool *pass);

/**
 * Doubles the named gain ("k", "lambda", "g") from `floor` until the loop
 * settles, and returns the trial ladder as JSON. A floor at or below zero
 * selects the knob default. `exhausted`, when non-null, receives true when
 * no rung passed; exhaustion is data, null means the probe could not run.
 * Free with reg_string_free.
 *
 * # Safety
 * `sc` must be null or a live pointer from reg_scenario_new; `knob` must
 * be null or a NUL terminated string valid for the call; `exhausted` must
 * be null or point to writable memory for one bool.
 */
char *reg_probe_json(const struct RegScenario *sc,
                     const char *knob,
                     double floor,
                     uint32_t max_doublings,
                     bool *exhausted);

/**
 * Releases a string this library returned as owned. Null is allowed.
 *
 * # Safety
 * `s` must be null or an owned string pointer from this library, not yet
 * freed and unmodified; it is invalid after the call.
 */
void reg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REGULIB_H */

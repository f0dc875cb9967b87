#ifndef DOMD_H
#define DOMD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  DOMD_STATUS_OK = 0,
  DOMD_STATUS_NULL_POINTER = 1,
  DOMD_STATUS_INVALID_ARGUMENT = 2,
  DOMD_STATUS_CONFIG = 3,
  DOMD_STATUS_DIMENSION = 4,
  /**
   * A failure inside a protocol round.
   */
  DOMD_STATUS_STEP = 5,
  DOMD_STATUS_IO = 6,
  DOMD_STATUS_PANIC = 7,
  DOMD_STATUS_BUFFER_TOO_SMALL = 8,
} DomdStatus;

/**
 * Consensus network (graph plus weights).
 */
typedef struct DomdNetwork DomdNetwork;

/**
 * A finished run.
 */
typedef struct DomdRun DomdRun;

/**
 * Regret bound terms and the constants behind them.
 */
typedef struct {
  double e_track;
  double e_net;
  double e_stoch;
  double total;
  double measured;
  double l;
  double rsq;
  double k;
  double delta;
  /**
   * Nonzero when the configuration satisfies the bound's hypotheses.
   */
  int32_t within_hypotheses;
} DomdBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *domd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *domd_version(void);

/**
 * Metropolis-weighted rows × cols grid.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
DomdStatus domd_network_grid(size_t rows, size_t cols, DomdNetwork **out);

/**
 * Metropolis-weighted graph on `n` nodes from `edge_count` pairs stored
 * flat in `edges` (2 × edge_count entries, 0-based).
 *
 * # Safety
 * `edges` must point to 2 × `edge_count` readable values (or be null when
 * `edge_count` is 0); `out` must be valid for one handle.
 */
DomdStatus domd_network_from_edges(size_t n,
                                   const size_t *edges,
                                   size_t edge_count,
                                   DomdNetwork **out);

/**
 * Number of agents; 0 for a null handle.
 *
 * # Safety
 * `network` must be null or a live handle.
 */
size_t domd_network_size(const DomdNetwork *network);

/**
 * Second-largest eigenvalue magnitude of the weight matrix.
 *
 * # Safety
 * `network` must be a live handle and `out` writable.
 */
DomdStatus domd_network_sigma2(const DomdNetwork *network, double *out);

/**
 * Weight W_ij.
 *
 * # Safety
 * `network` must be a live handle and `out` writable.
 */
DomdStatus domd_network_weight(const DomdNetwork *network, size_t i, size_t j, double *out);

/**
 * Releases a network; null is ignored.
 *
 * # Safety
 * `network` must be null or a handle not yet freed.
 */
void domd_network_free(DomdNetwork *network);

/**
 * Runs an experiment. `preset` and `config_toml` may each be null but not
 * both; `overrides` is null or newline-separated `key=value` lines.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` valid for one handle.
 */
DomdStatus domd_run_create(const char *preset,
                           const char *config_toml,
                           const char *overrides,
                           DomdRun **out);

/**
 * Rounds T; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t domd_run_rounds(const DomdRun *run);

/**
 * Number of agents; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t domd_run_agents(const DomdRun *run);

/**
 * State dimension; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t domd_run_dim(const DomdRun *run);

/**
 * Cumulative dynamic regret Reg_T and Reg_T / T.
 *
 * # Safety
 * `run` must be a live handle; `total` and `normalized` writable.
 */
DomdStatus domd_run_regret(const DomdRun *run, double *total, double *normalized);

/**
 * Copies Reg_t for t = 1..=T into `buf` (at least T entries).
 *
 * # Safety
 * `run` must be a live handle; `buf` writable for `len` values.
 */
DomdStatus domd_run_regret_series(const DomdRun *run, double *buf, size_t len);

/**
 * The regret bound evaluated for this run.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
DomdStatus domd_run_bound(const DomdRun *run, DomdBound *out);

/**
 * Agent `agent`'s estimate x_{i,t} at round t (1-based) into `buf` (dim entries).
 *
 * # Safety
 * `run` must be a live handle; `buf` writable for `len` values.
 */
DomdStatus domd_run_estimate(const DomdRun *run, size_t t, size_t agent, double *buf, size_t len);

/**
 * Target state x*_t for t in 1..=T+1 into `buf` (dim entries).
 *
 * # Safety
 * `run` must be a live handle; `buf` writable for `len` values.
 */
DomdStatus domd_run_target(const DomdRun *run, size_t t, double *buf, size_t len);

/**
 * Writes regret.csv, trajectory.csv, estimates.csv and manifest.txt into `dir`.
 *
 * # Safety
 * `run` must be a live handle; `dir` NUL-terminated.
 */
DomdStatus domd_run_write_artifacts(const DomdRun *run, const char *dir);

/**
 * Releases a run; null is ignored.
 *
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void domd_run_free(DomdRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMD_H */

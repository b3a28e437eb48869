#ifndef GWLOOPS_H
#define GWLOOPS_H

/* Generated by cbindgen from gwloops-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum gwl_status {
  GWL_OK = 0,
  // A parameter is out of its documented domain.
  GWL_ERR_INVALID_ARGUMENT = 1,
  // The requested tree exceeds the supported size or budget.
  GWL_ERR_TOO_LARGE = 2,
  // The computation failed (overflow, search cap, no sign change, ...).
  GWL_ERR_RUNTIME = 3,
  // A required pointer was null.
  GWL_ERR_NULL_POINTER = 4,
  // An internal panic was caught at the boundary.
  GWL_ERR_PANIC = 5,
} gwl_status;

// Opaque tree handle.
typedef struct gwl_tree gwl_tree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static description of a status code.
const char *gwl_status_message(enum gwl_status status);

// Build the regular tree with d children per vertex and n generations.
//
// # Safety
// `out` must be a valid pointer; the returned handle must be released
// with `gwl_tree_free`.
enum gwl_status gwl_tree_regular(uint32_t d, uint32_t n, struct gwl_tree **out);

// Sample a Galton-Watson tree with Poisson(mu) offspring, cut at level n.
//
// # Safety
// `out` must be a valid pointer; the returned handle must be released
// with `gwl_tree_free`.
enum gwl_status gwl_tree_gw_poisson(double mu, uint32_t n, uint64_t seed, struct gwl_tree **out);

// Release a tree handle. Null is ignored.
//
// # Safety
// `tree` must have been returned by a gwl_tree_* constructor and not
// freed before.
void gwl_tree_free(struct gwl_tree *tree);

// Number of vertices of the tree.
//
// # Safety
// `tree` must be a live handle.
uint64_t gwl_tree_vertex_count(const struct gwl_tree *tree);

// Deepest generation present in the tree.
//
// # Safety
// `tree` must be a live handle.
uint32_t gwl_tree_max_generation(const struct gwl_tree *tree);

// Importance-sampling estimate of the probability, under the
// theta-weighted measure, that some loop through the root reaches
// generation m. Deterministic for a fixed seed, independent of `workers`.
//
// # Safety
// `tree` must be a live handle; `out_value` must be valid;
// `out_std_error` may be null.
enum gwl_status gwl_estimate_reach(const struct gwl_tree *tree,
                                   double theta,
                                   double beta,
                                   double u,
                                   uint32_t m,
                                   uint64_t n_samples,
                                   uint64_t seed,
                                   uint32_t workers,
                                   double *out_value,
                                   double *out_std_error);

// Metropolis estimate of the reach probability (single sequential chain).
//
// # Safety
// As for `gwl_estimate_reach`.
enum gwl_status gwl_mcmc_reach(const struct gwl_tree *tree,
                               double theta,
                               double beta,
                               double u,
                               uint32_t m,
                               uint64_t n_steps,
                               uint64_t burn_in,
                               uint64_t thin,
                               uint64_t seed,
                               double *out_value,
                               double *out_std_error);

// Monte Carlo estimate of the partition function E[theta^L] together with
// its standard error and logarithm.
//
// # Safety
// As for `gwl_estimate_reach`; `out_log_value` may be null.
enum gwl_status gwl_partition_function(const struct gwl_tree *tree,
                                       double theta,
                                       double beta,
                                       double u,
                                       uint64_t n_samples,
                                       uint64_t seed,
                                       uint32_t workers,
                                       double *out_value,
                                       double *out_std_error,
                                       double *out_log_value);

// Long-loop decay constant for deterministic offspring d.
//
// # Safety
// `out` must be valid.
enum gwl_status gwl_q_tilde_deterministic(uint32_t d, double theta, double beta, double *out);

// Long-loop decay constant for Poisson(mu) offspring.
//
// # Safety
// `out` must be valid.
enum gwl_status gwl_q_tilde_poisson(double mu, double theta, double beta, double *out);

// Decay envelope c_d at offspring bound d for the window beta = q/d.
//
// # Safety
// `out` must be valid.
enum gwl_status gwl_c_d(double q, double theta, uint32_t d, double *out);

// Least d whose decay envelope stays below 1 (with the guard window).
//
// # Safety
// `out` must be valid.
enum gwl_status gwl_d0(double q, double theta, uint32_t *out);

// Closed-form bounds for the root-edge pattern events on d children:
// upper bound on P[all edges empty], lower bound on P[all carry <= 1].
//
// # Safety
// Out pointers must be valid.
enum gwl_status gwl_prob_a_bounds(uint32_t d,
                                  double theta,
                                  double beta,
                                  double *out_empty_upper,
                                  double *out_at_most_one_lower);

// Critical beta where the decay constant of Poisson(mu) offspring crosses
// 1 (bisection to 1e-9).
//
// # Safety
// `out` must be valid.
enum gwl_status gwl_critical_beta_poisson(double mu, double theta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GWLOOPS_H */

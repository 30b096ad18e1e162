#ifndef HIPLAN_H
#define HIPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HiplanStatus {
  HIPLAN_STATUS_OK = 0,
  HIPLAN_STATUS_NULL_POINTER = 1,
  HIPLAN_STATUS_INVALID_UTF8 = 2,
  HIPLAN_STATUS_PARSE_ERROR = 3,
  HIPLAN_STATUS_VALIDATION_ERROR = 4,
  HIPLAN_STATUS_CAPACITY_ERROR = 5,
  HIPLAN_STATUS_NOT_SOLVED = 6,
  HIPLAN_STATUS_DOMAIN_ERROR = 7,
  HIPLAN_STATUS_PANIC = 8,
} HiplanStatus;

typedef enum HiplanOutcome {
  HIPLAN_OUTCOME_SOLVED = 0,
  HIPLAN_OUTCOME_NOT_SOLVED = 1,
  HIPLAN_OUTCOME_NON_HALTING = 2,
} HiplanOutcome;

/**
 * Opaque program handle.
 */
typedef struct HiplanProgram HiplanProgram;

/**
 * Opaque task handle.
 */
typedef struct HiplanTask HiplanTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Error message of the most recent call on this thread; empty after a
 * successful call. The pointer stays valid until the next hiplan call on
 * this thread.
 */
const char *hiplan_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void hiplan_string_free(char *s);

/**
 * Parses and validates a task from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HiplanStatus hiplan_task_from_json(const char *json, struct HiplanTask **out);

/**
 * # Safety
 * `task` must be null or a handle from [`hiplan_task_from_json`], not yet freed.
 */
void hiplan_task_free(struct HiplanTask *task);

/**
 * Number of light cells, or 0 for a null handle.
 *
 * # Safety
 * `task` must be null or a live task handle.
 */
size_t hiplan_task_num_lights(const struct HiplanTask *task);

/**
 * Parses a program from its DSL text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HiplanStatus hiplan_program_parse(const char *text, struct HiplanProgram **out);

/**
 * # Safety
 * `program` must be null or a live program handle.
 */
void hiplan_program_free(struct HiplanProgram *program);

/**
 * Canonical DSL text of a program; free it with [`hiplan_string_free`].
 *
 * # Safety
 * `program` must be a live handle and `out` a valid pointer.
 */
enum HiplanStatus hiplan_program_serialize(const struct HiplanProgram *program, char **out);

/**
 * Total number of instructions over all routines, or 0 for a null handle.
 *
 * # Safety
 * `program` must be null or a live program handle.
 */
size_t hiplan_program_length(const struct HiplanProgram *program);

/**
 * Executes a program with the default budget.
 *
 * # Safety
 * Handles must be live; `outcome` and `steps` must be valid pointers.
 */
enum HiplanStatus hiplan_execute(const struct HiplanTask *task,
                                 const struct HiplanProgram *program,
                                 enum HiplanOutcome *outcome,
                                 size_t *steps);

/**
 * Canonical form of a solving program, as a new handle.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum HiplanStatus hiplan_canonicalize(const struct HiplanTask *task,
                                      const struct HiplanProgram *program,
                                      struct HiplanProgram **out);

/**
 * Grammar-induction log prior.
 *
 * # Safety
 * `program` must be live and `out` a valid pointer.
 */
enum HiplanStatus hiplan_grammar_logprior(const struct HiplanProgram *program,
                                          double alpha,
                                          double p_call,
                                          double p_end,
                                          double *out);

/**
 * Step-cost log prior (minus the number of executed steps).
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum HiplanStatus hiplan_step_cost_logprior(const struct HiplanTask *task,
                                            const struct HiplanProgram *program,
                                            double *out);

/**
 * MDL log prior (minus the program length).
 *
 * # Safety
 * `program` must be live and `out` a valid pointer.
 */
enum HiplanStatus hiplan_mdl_logprior(const struct HiplanProgram *program, double *out);

/**
 * `k·ln n − 2·loglik`.
 */
double hiplan_bic(double loglik, size_t k, size_t n);

/**
 * Likelihood-ratio statistic and its chi-square tail probability.
 *
 * # Safety
 * `stat` and `p_value` must be valid pointers.
 */
enum HiplanStatus hiplan_lr_test(double loglik_null,
                                 double loglik_alt,
                                 size_t df,
                                 double *stat,
                                 double *p_value);

/**
 * Jensen–Shannon divergence (natural log) of two distributions of length `len`.
 *
 * # Safety
 * `p` and `q` must point to `len` doubles each; `out` must be valid.
 */
enum HiplanStatus hiplan_js_divergence(const double *p, const double *q, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIPLAN_H */

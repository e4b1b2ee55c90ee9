#ifndef TREEPLAN_H
#define TREEPLAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_UTF8 = 2,
  TP_STATUS_DOMAIN = 3,
  TP_STATUS_TREE = 4,
  TP_STATUS_CONFIG = 5,
  TP_STATUS_ENVIRONMENT = 6,
  TP_STATUS_GATEWAY = 7,
  TP_STATUS_PANIC = 8,
} TpStatus;

typedef enum TpVariant {
  TP_VARIANT_FULL = 0,
  TP_VARIANT_FIXED = 1,
  TP_VARIANT_NO_EXPLORATION = 2,
  TP_VARIANT_INITIAL_ONLY = 3,
  TP_VARIANT_ORIGINAL_MCTS = 4,
  // Uses the `lambda` argument.
  TP_VARIANT_LAMBDA = 5,
} TpVariant;

// Terminal verdict passed to [`tp_tree_add_child`].
typedef enum TpVerdict {
  TP_VERDICT_NOT_TERMINAL = 0,
  TP_VERDICT_FAILED = 1,
  TP_VERDICT_PASSED = 2,
} TpVerdict;

// Opaque reasoning tree.
typedef struct TpTree TpTree;

typedef struct TpStats {
  double r0;
  double c0;
  double reward_sum;
  uint64_t n;
} TpStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until
// the next call into this library from the same thread.
const char *tp_last_error(void);

// # Safety
// `s` must be null or a string returned by this library, freed at most once.
void tp_string_free(char *s);

// UCT score of a node whose parent has `parent_n` backpropagations.
//
// # Safety
// `stats` must be readable and `out_score` writable.
enum TpStatus tp_uct(const struct TpStats *stats,
                     uint64_t parent_n,
                     enum TpVariant kind,
                     double lambda,
                     double *out_score);

// # Safety
// `out_weight` must be writable.
enum TpStatus tp_exploration_weight(double c0, double *out_weight);

// # Safety
// `out_epsilon` must be writable.
enum TpStatus tp_hoeffding_epsilon(double big_n, uint64_t n, double *out_epsilon);

// Maps a 0..10 score and confidence onto initial reward and confidence.
//
// # Safety
// `out_stats` must be writable.
enum TpStatus tp_normalize_assessment(uint8_t score, uint8_t confidence, struct TpStats *out_stats);

// New empty tree. Release with [`tp_tree_free`].
struct TpTree *tp_tree_new(void);

// # Safety
// `tree` must be null or a handle from [`tp_tree_new`], freed at most once.
void tp_tree_free(struct TpTree *tree);

// # Safety
// `tree` must be a live handle.
size_t tp_tree_len(const struct TpTree *tree);

// # Safety
// `tree` must be a live handle and `out_id` writable.
enum TpStatus tp_tree_add_root(struct TpTree *tree, double r0, double c0, uint64_t *out_id);

// # Safety
// `tree` must be a live handle and `out_id` writable.
enum TpStatus tp_tree_add_child(struct TpTree *tree,
                                uint64_t parent,
                                double r0,
                                double c0,
                                enum TpVerdict verdict,
                                uint64_t *out_id);

// Pushes a failed terminal's initial reward into all of its ancestors.
//
// # Safety
// `tree` must be a live handle.
enum TpStatus tp_tree_backpropagate(struct TpTree *tree, uint64_t failed_terminal);

// Highest-scoring node to expand next. With `include_failed_terminals`
// set, failed terminals stay eligible.
//
// # Safety
// `tree` must be a live handle and `out_id` writable.
enum TpStatus tp_tree_select(const struct TpTree *tree,
                             enum TpVariant kind,
                             double lambda,
                             bool include_failed_terminals,
                             uint64_t *out_id);

// # Safety
// `tree` must be a live handle and `out_stats` writable.
enum TpStatus tp_tree_stats(const struct TpTree *tree, uint64_t id, struct TpStats *out_stats);

// Terminal node with the highest reward estimate. Sets `found` to false
// when the tree holds no terminal.
//
// # Safety
// `tree` must be a live handle; `found` and `out_id` writable.
enum TpStatus tp_tree_best_terminal(const struct TpTree *tree, bool *found, uint64_t *out_id);

// Runs one task and returns its trace as canonical JSON.
//
// `env` is `wiki`, `shop` or `code`; `backend` is `http` or
// `replay:PATH`; a null `task_id` runs the first task in the file. A
// failure after the search has started still yields the partial trace in
// `out_trace_json`; failures before that, including an unreachable
// backend, report [`TpStatus::Config`].
//
// # Safety
// String arguments must be null-terminated; `out_trace_json` writable.
enum TpStatus tp_run_task(const char *env,
                          const char *tasks_path,
                          const char *task_id,
                          const char *backend,
                          char **out_trace_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREEPLAN_H */

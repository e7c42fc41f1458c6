#ifndef FRACWOS_H
#define FRACWOS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FwStatus {
  FW_STATUS_OK = 0,
  FW_STATUS_NULL_POINTER = 1,
  FW_STATUS_INVALID_ARGUMENT = 2,
  FW_STATUS_INVALID_INPUT = 3,
  FW_STATUS_NUMERICAL = 4,
  FW_STATUS_BUDGET = 5,
  FW_STATUS_IO = 6,
  FW_STATUS_PANIC = 99,
} FwStatus;

typedef struct FwHierarchy FwHierarchy;

typedef struct FwProblem FwProblem;

typedef struct FwSolution FwSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *fw_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fw_version(void);

// Built-in problem `example1`, `example2` or `example3` at stability index
// `alpha`.
//
// # Safety
// `name` must be a NUL-terminated string and `problem` a writable pointer.
enum FwStatus fw_problem_example(const char *name, double alpha, struct FwProblem **problem);

// Problem with source `f` and exterior data `g` given as expressions in `x`
// and `y`, on a domain such as `ball(0, 0, 1)` or `box(0, 0, 1, 1)`.
//
// # Safety
// String arguments must be NUL-terminated; `problem` must be writable.
enum FwStatus fw_problem_custom(double alpha,
                                const char *domain,
                                const char *f,
                                const char *g,
                                struct FwProblem **problem);

// # Safety
// `problem` must come from a `fw_problem_*` constructor or be NULL.
void fw_problem_free(struct FwProblem *problem);

// Nested meshes on the bounding region of `domain`, levels 1 to `finest`.
//
// # Safety
// `domain` must be NUL-terminated; `hierarchy` must be writable.
enum FwStatus fw_hierarchy_new(const char *domain, size_t finest, struct FwHierarchy **hierarchy);

// # Safety
// `hierarchy` must come from [`fw_hierarchy_new`] or be NULL.
void fw_hierarchy_free(struct FwHierarchy *hierarchy);

// Vertex count of mesh `level`.
//
// # Safety
// Pointers must be valid.
enum FwStatus fw_hierarchy_vertex_count(const struct FwHierarchy *hierarchy,
                                        size_t level,
                                        size_t *count);

// Writes vertex coordinates of mesh `level` as `x0, y0, x1, y1, ...` into
// `xy`, which must hold `2 * len` doubles with `len` the vertex count.
//
// # Safety
// `xy` must point to `2 * len` writable doubles.
enum FwStatus fw_hierarchy_vertices(const struct FwHierarchy *hierarchy,
                                    size_t level,
                                    double *xy,
                                    size_t len);

// Monte Carlo estimate of the solution at `(x, y)` from `samples` walks.
//
// # Safety
// Pointers must be valid; `std_error` may be NULL.
enum FwStatus fw_point_estimate(const struct FwProblem *problem,
                                double x,
                                double y,
                                uint64_t samples,
                                uint64_t seed,
                                double *mean,
                                double *std_error);

// Multilevel solve to RMS tolerance `eps` with levels `coarsest..=finest`
// (the finest level may be lowered adaptively).
//
// # Safety
// Pointers must be valid; `solution` must be writable.
enum FwStatus fw_solve(const struct FwHierarchy *hierarchy,
                       const struct FwProblem *problem,
                       double eps,
                       size_t coarsest,
                       size_t finest,
                       uint64_t seed,
                       struct FwSolution **solution);

// # Safety
// `solution` must come from [`fw_solve`] or be NULL.
void fw_solution_free(struct FwSolution *solution);

// Mesh level, vertex count, total cost in walk steps and estimated RMS
// statistical error of a solution. Any output pointer may be NULL.
//
// # Safety
// `solution` must be valid.
enum FwStatus fw_solution_info(const struct FwSolution *solution,
                               size_t *level,
                               size_t *len,
                               uint64_t *total_cost,
                               double *statistical_error);

// Copies the nodal values into `values`, which must hold exactly `len`
// doubles.
//
// # Safety
// `values` must point to `len` writable doubles.
enum FwStatus fw_solution_values(const struct FwSolution *solution, double *values, size_t len);

// Smallest eigenvalue of the fractional Laplacian on the hierarchy's
// domain by inexact Arnoldi with at most `m` steps. `relaxed` selects the
// gap-based tolerance schedule instead of a fixed one.
//
// # Safety
// Pointers must be valid; `total_cost` may be NULL.
enum FwStatus fw_smallest_eigenvalue(const struct FwHierarchy *hierarchy,
                                     double alpha,
                                     size_t coarsest,
                                     double tol,
                                     double safety,
                                     size_t m,
                                     bool relaxed,
                                     uint64_t seed,
                                     double *lambda,
                                     uint64_t *total_cost);

// Largest one-step contraction functional over `starts` uniform start
// pairs in the unit square.
//
// # Safety
// `max` must be writable; `std_error` may be NULL.
enum FwStatus fw_check_contraction(double alpha,
                                   double mu,
                                   uint64_t samples,
                                   size_t starts,
                                   uint64_t seed,
                                   double *max,
                                   double *std_error);

// Largest one-step barrier functional with `Φ = max{A, d^{−t}}` over
// `starts` uniform start points in the unit square.
//
// # Safety
// `max` must be writable; `std_error` may be NULL.
enum FwStatus fw_check_barrier(double alpha,
                               double t,
                               double a,
                               uint64_t samples,
                               size_t starts,
                               uint64_t seed,
                               double *max,
                               double *std_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACWOS_H */

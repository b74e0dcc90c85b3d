#ifndef NETUQ_H
#define NETUQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NetuqMethod {
  NETUQ_METHOD_JACOBI = 0,
  NETUQ_METHOD_GAUSS_SEIDEL = 1,
} NetuqMethod;

typedef enum NetuqStatus {
  NETUQ_STATUS_OK = 0,
  NETUQ_STATUS_NULL_POINTER = 1,
  NETUQ_STATUS_INVALID_ARGUMENT = 2,
  NETUQ_STATUS_INVALID_CONFIG = 3,
  NETUQ_STATUS_NOT_CONVERGED = 4,
  NETUQ_STATUS_DIVERGED = 5,
  NETUQ_STATUS_BUFFER_TOO_SMALL = 6,
  NETUQ_STATUS_INTERNAL = 7,
  NETUQ_STATUS_PANIC = 8,
} NetuqStatus;

// Diffusion benchmark on an s×s decomposition of the unit square.
typedef struct NetuqBenchmark NetuqBenchmark;

// Solver settings. `anderson_restart` of 0 means never restart.
typedef struct NetuqSolveOptions {
  enum NetuqMethod method;
  double omega;
  double tol;
  size_t max_iter;
  size_t anderson_memory;
  size_t anderson_restart;
} NetuqSolveOptions;

typedef struct NetuqSolveSummary {
  size_t iterations;
  double final_residual;
  size_t n_seq;
} NetuqSolveSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t netuq_last_error(char *buf, size_t len);

struct NetuqSolveOptions netuq_default_solve_options(void);

// Builds the benchmark with `mesh_nodes` nodes per axis split into
// `subdomains`×`subdomains` blocks.
//
// # Safety
// `out` must be valid for writing one pointer.
enum NetuqStatus netuq_benchmark_new(size_t mesh_nodes,
                                     size_t subdomains,
                                     struct NetuqBenchmark **out);

// # Safety
// `h` must come from [`netuq_benchmark_new`] and not be used afterwards.
void netuq_benchmark_free(struct NetuqBenchmark *h);

// Number of subdomain components in the network.
//
// # Safety
// `h` must be a live handle or null (returns 0).
size_t netuq_benchmark_n_components(const struct NetuqBenchmark *h);

// Solves from zero. `summary` may be null. Returns `NotConverged` or
// `Diverged` when the iteration stops early; the state is kept either way.
//
// # Safety
// `h` must be a live handle and `opts` a valid pointer.
enum NetuqStatus netuq_benchmark_solve(struct NetuqBenchmark *h,
                                       const struct NetuqSolveOptions *opts,
                                       struct NetuqSolveSummary *summary);

// Length of the QoI vector: PCE coefficients of each probe, probe-major.
//
// # Safety
// `h` must be a live handle or null (returns 0).
size_t netuq_benchmark_qoi_len(const struct NetuqBenchmark *h);

// Copies the current QoI into `buf`.
//
// # Safety
// `h` must be a live handle and `buf` valid for `len` doubles.
enum NetuqStatus netuq_benchmark_qoi(const struct NetuqBenchmark *h, double *buf, size_t len);

// Number of total-degree Hermite terms in `dim` variables up to `order`.
size_t netuq_pce_n_terms(size_t dim, uint32_t order);

// Evaluates every basis polynomial at `xi` (length `dim`) into `out`.
//
// # Safety
// `xi` must be valid for `dim` doubles and `out` for `len`.
enum NetuqStatus netuq_pce_eval_basis(size_t dim,
                                      uint32_t order,
                                      const double *xi,
                                      double *out,
                                      size_t len);

// Gauss–Hermite rule with `n` points for the standard normal weight.
//
// # Safety
// `nodes` and `weights` must each be valid for `n` doubles.
enum NetuqStatus netuq_gauss_hermite(size_t n, double *nodes, double *weights);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETUQ_H */

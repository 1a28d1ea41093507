#ifndef KAC_FFI_H
#define KAC_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define KAC_OK 0

#define KAC_ERR_NULL -1

#define KAC_ERR_INVALID -2

#define KAC_ERR_NUMERICAL -3

#define KAC_ERR_NOT_CONVERGED -4

#define KAC_ERR_IO -5

#define KAC_ERR_BUFFER -6

#define KAC_ERR_PANIC -7

#define KAC_SCHEME_PICARD 0

#define KAC_SCHEME_DIRECT 1

/**
 * Real field on the phase-space grid, row-major with `v` fastest.
 */
typedef struct KacField KacField;

/**
 * Grid geometry.
 */
typedef struct KacGrid KacGrid;

typedef struct KacSolver KacSolver;

/**
 * Solution stored at each step time.
 */
typedef struct KacTrajectory KacTrajectory;

/**
 * Parameters of a nonlinear run. Fill with `kac_solver_params_default`.
 */
typedef struct KacSolverParams {
  /**
   * Angular singularity order, in (0, 1).
   */
  double s;
  /**
   * Cross-section prefactor.
   */
  double cross_section_c0;
  /**
   * Multiplier growth constant.
   */
  double c0;
  /**
   * Multiplier regularisation, in (0, 1).
   */
  double delta;
  /**
   * Sobolev index in `x`.
   */
  double r;
  double dt;
  double t_end;
  /**
   * Size of the initial perturbation.
   */
  double eps0;
  /**
   * `KAC_SCHEME_PICARD` or `KAC_SCHEME_DIRECT`.
   */
  int scheme;
  double picard_tol;
  uint32_t picard_max_iter;
} KacSolverParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *kac_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t kac_last_error(char *buf, size_t len);

/**
 * Grid with `nx * nv` points on `[-lx, lx) x [-lv, lv)`. Sizes must be
 * powers of two of at least 8 and `lv` at least 8.
 *
 * # Safety
 * `out` must be null or valid for a pointer write.
 */
int kac_grid_new(size_t nx, size_t nv, double lx, double lv, struct KacGrid **out);

/**
 * # Safety
 * `grid` must be null or a handle from `kac_grid_new` not yet freed.
 */
void kac_grid_free(struct KacGrid *grid);

/**
 * Number of grid points `nx * nv`.
 *
 * # Safety
 * `grid` must be a live handle and `out` valid for a write.
 */
int kac_grid_len(const struct KacGrid *grid, size_t *out);

/**
 * Field copied from `len` values at `data`, with `len == nx * nv`.
 *
 * # Safety
 * `grid` must be a live handle, `data` must point to `len` readable
 * doubles and `out` must be valid for a pointer write.
 */
int kac_field_new(const struct KacGrid *grid,
                  const double *data,
                  size_t len,
                  struct KacField **out);

/**
 * Zero field on `grid`.
 *
 * # Safety
 * `grid` must be a live handle and `out` valid for a pointer write.
 */
int kac_field_zeros(const struct KacGrid *grid, struct KacField **out);

/**
 * # Safety
 * `field` must be null or a handle not yet freed.
 */
void kac_field_free(struct KacField *field);

/**
 * Number of values held by `field`.
 *
 * # Safety
 * `field` must be a live handle and `out` valid for a write.
 */
int kac_field_len(const struct KacField *field, size_t *out);

/**
 * Copies the field values into `out`, which must hold at least the field length.
 *
 * # Safety
 * `field` must be a live handle and `out` must point to `len` writable doubles.
 */
int kac_field_copy_data(const struct KacField *field, double *out, size_t len);

/**
 * Writes `field` at time `t` to a snapshot file.
 *
 * # Safety
 * `field` must be a live handle and `path` a NUL-terminated string.
 */
int kac_field_save(const struct KacField *field, const char *path, double t);

/**
 * Reads a snapshot file. `out_t` may be null.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` valid for a pointer write
 * and `out_t` null or valid for a write.
 */
int kac_field_load(const char *path, struct KacField **out, double *out_t);

/**
 * Exact solution at time `t` of the linear free-transport plus fractional
 * velocity diffusion model of order `s`, started from `field`.
 *
 * # Safety
 * `field` must be a live handle and `out` valid for a pointer write.
 */
int kac_kolmogorov(const struct KacField *field, double s, double t, struct KacField **out);

/**
 * `H^r_x(L^2_v)` norm of `field`.
 *
 * # Safety
 * `field` must be a live handle and `out` valid for a write.
 */
int kac_norm_hr(const struct KacField *field, double r, double *out);

/**
 * Default run parameters.
 *
 * # Safety
 * `out` must be valid for a write.
 */
int kac_solver_params_default(struct KacSolverParams *out);

/**
 * Solver for the nonlinear perturbation equation on `grid`.
 *
 * # Safety
 * `grid` and `params` must be valid and `out` valid for a pointer write.
 */
int kac_solver_new(const struct KacGrid *grid,
                   const struct KacSolverParams *params,
                   struct KacSolver **out);

/**
 * # Safety
 * `solver` must be null or a handle not yet freed.
 */
void kac_solver_free(struct KacSolver *solver);

/**
 * Runs from the initial profile `g0`, rescaled to size `eps0`.
 *
 * # Safety
 * `solver` and `g0` must be live handles and `out` valid for a pointer write.
 */
int kac_solver_run(const struct KacSolver *solver,
                   const struct KacField *g0,
                   struct KacTrajectory **out);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void kac_trajectory_free(struct KacTrajectory *traj);

/**
 * Number of stored times, including `t = 0`.
 *
 * # Safety
 * `traj` must be a live handle and `out` valid for a write.
 */
int kac_trajectory_len(const struct KacTrajectory *traj, size_t *out);

/**
 * Time of entry `i`.
 *
 * # Safety
 * `traj` must be a live handle and `out` valid for a write.
 */
int kac_trajectory_time(const struct KacTrajectory *traj, size_t i, double *out);

/**
 * Copy of the field at entry `i` as a new handle.
 *
 * # Safety
 * `traj` must be a live handle and `out` valid for a pointer write.
 */
int kac_trajectory_field(const struct KacTrajectory *traj, size_t i, struct KacField **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KAC_FFI_H */

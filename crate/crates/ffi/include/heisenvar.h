#ifndef HEISENVAR_H
#define HEISENVAR_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  HV_STATUS_OK = 0,
  HV_STATUS_NULL_POINTER = 1,
  HV_STATUS_INVALID_ARGUMENT = 2,
  HV_STATUS_NOT_CONVERGED = 3,
  HV_STATUS_FORMAT = 4,
  HV_STATUS_IO = 5,
  HV_STATUS_INTERNAL = 6,
} HvStatus;

/**
 * Opaque field on a mask.
 */
typedef struct HvField HvField;

/**
 * Opaque domain mask on a rectangular grid.
 */
typedef struct HvMask HvMask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hv_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated) and returns its full length without the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null with `len` 0.
 */
uintptr_t hv_last_error(char *buf, uintptr_t len);

/**
 * Korányi gauge of (x, y, t).
 *
 * # Safety
 * `p` must point to three doubles.
 */
HvStatus hv_gauge(const double *p, double *result);

/**
 * a ∘ b in the group law of ℍ¹.
 *
 * # Safety
 * `a` and `b` must point to three doubles, `result` to three writable ones.
 */
HvStatus hv_compose(const double *a, const double *b, double *result);

/**
 * Full-box mask. `bounds` holds (x0, x1, y0, y1, t0, t1), `res` the node
 * counts per axis.
 *
 * # Safety
 * `bounds` must point to six doubles, `res` to three sizes, `mask` to a
 * writable handle slot.
 */
HvStatus hv_mask_box(const double *bounds, const uintptr_t *res, HvMask **mask);

/**
 * Korányi ball of `radius` around `center` on the given grid.
 *
 * # Safety
 * As [`hv_mask_box`]; `center` must point to three doubles.
 */
HvStatus hv_mask_ball(const double *bounds,
                      const uintptr_t *res,
                      const double *center,
                      double radius,
                      HvMask **mask);

/**
 * Number of interior nodes of the mask.
 *
 * # Safety
 * `mask` must be a live handle.
 */
HvStatus hv_mask_count(const HvMask *mask, uintptr_t *count);

/**
 * # Safety
 * `mask` must be null or a handle not freed before.
 */
void hv_mask_free(HvMask *mask);

/**
 * Samples amplitude·λ⁻¹·U(δ_{1/λ}(center⁻¹ ∘ ξ)) on the mask.
 *
 * # Safety
 * `mask` must be live, `center` three doubles, `field` a writable slot.
 */
HvStatus hv_field_bubble(const HvMask *mask,
                         double lambda,
                         const double *center,
                         double amplitude,
                         HvField **field);

/**
 * Reads an HSF1 file.
 *
 * # Safety
 * `file` must be a NUL-terminated path, `field` a writable slot.
 */
HvStatus hv_field_load(const char *file, HvField **field);

/**
 * Writes an HSF1 file.
 *
 * # Safety
 * `field` must be live and `file` a NUL-terminated path.
 */
HvStatus hv_field_save(const HvField *field, const char *file);

/**
 * Node count of the field's grid (interior and exterior).
 *
 * # Safety
 * `field` must be live.
 */
HvStatus hv_field_len(const HvField *field, uintptr_t *len);

/**
 * Copies the node values (x fastest) into `buf`, which must hold exactly
 * `hv_field_len` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
HvStatus hv_field_values(const HvField *field, double *buf, uintptr_t len);

/**
 * # Safety
 * `field` must be null or a handle not freed before.
 */
void hv_field_free(HvField *field);

/**
 * Discrete Dirichlet energy ∫|D_H u|².
 *
 * # Safety
 * `field` must be live.
 */
HvStatus hv_dirichlet_energy(const HvField *field, double *result);

/**
 * ∫|u|⁴ / (∫|D_H u|²)².
 *
 * # Safety
 * `field` must be live.
 */
HvStatus hv_sobolev_quotient(const HvField *field, double *result);

/**
 * Sharp-constant estimate with the default level ladder.
 *
 * # Safety
 * `value` and `error` must be writable.
 */
HvStatus hv_estimate_sstar(double *value, double *error);

/**
 * Subcritical maximizer for exponent 4 − ε on the mask. Writes the
 * maximizer handle and S*_ε; a run that stops at the iteration cap still
 * hands back its last iterate together with `HV_STATUS_NOT_CONVERGED`.
 *
 * # Safety
 * `mask` must be live; `field` and `s_eps` writable.
 */
HvStatus hv_solve_subcritical(const HvMask *mask,
                              double eps,
                              double fp_tol,
                              uintptr_t fp_max_iter,
                              HvField **field,
                              double *s_eps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEISENVAR_H */

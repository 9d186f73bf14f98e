#ifndef GKDV_CONTROL_H
#define GKDV_CONTROL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GkdvStatus {
  GKDV_STATUS_OK = 0,
  GKDV_STATUS_NULL_POINTER = 1,
  GKDV_STATUS_DOMAIN = 2,
  GKDV_STATUS_RANGE = 3,
  GKDV_STATUS_INTEGRATION = 4,
  GKDV_STATUS_SOLVER = 5,
  GKDV_STATUS_BLOW_UP = 6,
  GKDV_STATUS_FIT = 7,
  GKDV_STATUS_CONFIG = 8,
  GKDV_STATUS_IO = 9,
  GKDV_STATUS_BUFFER_TOO_SMALL = 10,
  GKDV_STATUS_PANIC = 11,
} GkdvStatus;

// Opaque control specification.
typedef struct GkdvControlSpec GkdvControlSpec;

// Opaque controlled simulation.
typedef struct GkdvSimulation GkdvSimulation;

// Opaque solution of the (c0, rho0) system.
typedef struct GkdvTrajectory GkdvTrajectory;

typedef struct GkdvQuadratureConstants {
  double int_q;
  double int_q2;
  double int_q3;
  double lambda_p;
} GkdvQuadratureConstants;

typedef struct GkdvCorrectorSummary {
  double beta_c;
  double mu_c;
  double delta_c;
  double f2;
  double residual_pde;
  double residual_orth_1;
  double residual_orth_2;
  // A at the left end of the operator grid.
  double a_left;
} GkdvCorrectorSummary;

typedef struct GkdvInvariants {
  double mass;
  double energy;
  double h1_norm;
  // int a u^2 at the current time.
  double mass_rate;
  double energy_rate;
} GkdvInvariants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error of this thread into `buf` (NUL-terminated, truncated
// to `len`). Returns the full message length excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t gkdv_last_error_message(char *buf, uintptr_t len);

// Q(s) for p in {2, 3, 4}.
//
// # Safety
// `out_value` must be a valid pointer.
enum GkdvStatus gkdv_eval_q(uint32_t p, double s, double *out_value);

// Q_c(y).
//
// # Safety
// `out_value` must be a valid pointer.
enum GkdvStatus gkdv_eval_qc(uint32_t p, double c, double y, double *out_value);

// d/dc Q_c(y).
//
// # Safety
// `out_value` must be a valid pointer.
enum GkdvStatus gkdv_eval_lambda_qc(uint32_t p, double c, double y, double *out_value);

// int Q, int Q^2, int Q^3 and lambda_p.
//
// # Safety
// `out_constants` must be a valid pointer.
enum GkdvStatus gkdv_quadrature_constants(uint32_t p,
                                          struct GkdvQuadratureConstants *out_constants);

// Profile amplitude a_inf reaching c_f.
//
// # Safety
// `out_value` must be a valid pointer.
enum GkdvStatus gkdv_a_infinity(uint32_t p, double c_f, double lambda_p, double *out_value);

// # Safety
// `out_spec` must be a valid pointer; the handle it receives must be
// released with `gkdv_control_spec_free`.
enum GkdvStatus gkdv_control_spec_new(uint32_t p,
                                      double c_f,
                                      double eps,
                                      double delta0,
                                      double gamma0,
                                      struct GkdvControlSpec **out_spec);

// # Safety
// `spec` must be null or a handle from `gkdv_control_spec_new`, freed once.
void gkdv_control_spec_free(struct GkdvControlSpec *spec);

// a_inf of the specification.
//
// # Safety
// Pointers must be valid.
enum GkdvStatus gkdv_control_spec_a_inf(const struct GkdvControlSpec *spec, double *out_value);

// a0^{(k)}(x) for k <= 3.
//
// # Safety
// Pointers must be valid.
enum GkdvStatus gkdv_eval_a0_deriv(const struct GkdvControlSpec *spec,
                                   double x,
                                   uint32_t k,
                                   double *out_value);

// # Safety
// Pointers must be valid; release the handle with `gkdv_trajectory_free`.
enum GkdvStatus gkdv_trajectory_new(const struct GkdvControlSpec *spec,
                                    double t_end,
                                    struct GkdvTrajectory **out_traj);

// # Safety
// `traj` must be null or a handle from `gkdv_trajectory_new`, freed once.
void gkdv_trajectory_free(struct GkdvTrajectory *traj);

// (c0(t), rho0(t)) by cubic Hermite interpolation.
//
// # Safety
// Pointers must be valid.
enum GkdvStatus gkdv_trajectory_sample(const struct GkdvTrajectory *traj,
                                       double t,
                                       double *out_c0,
                                       double *out_rho0);

// Solves the corrector problem at (c, rho) with reference (c0, rho0).
//
// # Safety
// Pointers must be valid.
enum GkdvStatus gkdv_corrector_solve(const struct GkdvControlSpec *spec,
                                     double c,
                                     double rho,
                                     double c0,
                                     double rho0,
                                     struct GkdvCorrectorSummary *out_summary);

// Starts a controlled run from u0 = Q(x - rho0(0)) on [origin, origin + length)
// with `n` points (a power of two) and step `dt`. `traj` must cover the
// times the simulation will reach.
//
// # Safety
// Pointers must be valid; release the handle with `gkdv_simulation_free`.
enum GkdvStatus gkdv_simulation_new(const struct GkdvControlSpec *spec,
                                    const struct GkdvTrajectory *traj,
                                    double origin,
                                    double length,
                                    uintptr_t n,
                                    double dt,
                                    struct GkdvSimulation **out_sim);

// # Safety
// `sim` must be null or a handle from `gkdv_simulation_new`, freed once.
void gkdv_simulation_free(struct GkdvSimulation *sim);

// Advances to time `t_target` (not before the current time); the last step
// is shortened to land on it.
//
// # Safety
// `sim` must be a valid handle.
enum GkdvStatus gkdv_simulation_advance(struct GkdvSimulation *sim, double t_target);

// # Safety
// Pointers must be valid.
enum GkdvStatus gkdv_simulation_time(const struct GkdvSimulation *sim, double *out_t);

// Copies the samples into `buf`; `out_len` receives the number of points.
// Pass a null `buf` to query the length.
//
// # Safety
// `buf` must be null or point to `len` writable doubles.
enum GkdvStatus gkdv_simulation_samples(const struct GkdvSimulation *sim,
                                        double *buf,
                                        uintptr_t len,
                                        uintptr_t *out_len);

// Mass, energy, H1 norm and the balance right-hand sides.
//
// # Safety
// Pointers must be valid.
enum GkdvStatus gkdv_simulation_invariants(const struct GkdvSimulation *sim,
                                           struct GkdvInvariants *out_inv);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* GKDV_CONTROL_H */

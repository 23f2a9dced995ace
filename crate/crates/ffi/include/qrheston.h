#ifndef QRHESTON_H
#define QRHESTON_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum {
  QRH_STATUS_OK = 0,
  QRH_STATUS_DOMAIN = 1,
  QRH_STATUS_CONVERGENCE = 2,
  QRH_STATUS_DIMENSION = 3,
  QRH_STATUS_NO_SOLUTION = 4,
  QRH_STATUS_NUMERICAL = 5,
  QRH_STATUS_GRID_MISMATCH = 6,
  QRH_STATUS_GAP = 7,
  QRH_STATUS_FORMAT = 8,
  QRH_STATUS_CONFIG = 9,
  QRH_STATUS_IO = 10,
  QRH_STATUS_NULL_POINTER = 11,
  QRH_STATUS_INVALID_UTF8 = 12,
  QRH_STATUS_PANIC = 13,
} QrhStatus;

/*
 Opaque kernel approximation.
 */
typedef struct QrhKernel QrhKernel;

/*
 Opaque trained network.
 */
typedef struct QrhNetwork QrhNetwork;

/*
 `ω = (λ, η, a, b, c)`; roughness and variance cap take their defaults.
 */
typedef struct {
  double lambda;
  double eta;
  double a;
  double b;
  double c;
} QrhParams;

/*
 Hedge ratio and its parts.
 */
typedef struct {
  double ratio;
  double price;
  double dp_ds;
  /*
   Nonzero when the point was moved onto the network's grid.
   */
  int32_t clamped;
} QrhRatio;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *qrh_version(void);

/*
 Message of the last failed call on this thread; empty when none. Valid until the
 next failing call on the same thread.
 */
const char *qrh_last_error(void);

/*
 Kernel approximation with a given geometric mesh.

 # Safety
 `out` must be a valid pointer; on success it receives a handle to free with [`qrh_kernel_free`].
 */
QrhStatus qrh_kernel_new(double alpha, size_t n, double mesh, QrhKernel **out);

/*
 Kernel approximation at the mesh minimising the L² error on `[0, horizon]`.

 # Safety
 As [`qrh_kernel_new`].
 */
QrhStatus qrh_kernel_fit(double alpha, size_t n, double horizon, QrhKernel **out);

/*
 # Safety
 `k` must come from this library and not be used afterwards. Null is ignored.
 */
void qrh_kernel_free(QrhKernel *k);

/*
 Number of factors, mesh, weights and mean-reversion speeds. `weights` and `speeds`
 must hold `n` values each; `n` is written first and may be queried with null arrays.

 # Safety
 Pointers must be valid for the stated lengths.
 */
QrhStatus qrh_kernel_describe(const QrhKernel *k,
                              size_t *n,
                              double *mesh,
                              double *weights,
                              double *speeds);

/*
 Undiscounted Black-Scholes call price.
 */
double qrh_bs_price(double spot, double strike, double tau, double sigma);

/*
 Black-Scholes implied vol of a call price.

 # Safety
 `out` must be valid.
 */
QrhStatus qrh_implied_vol(double price, double spot, double strike, double tau, double *out);

/*
 Monte Carlo SPX implied vols on the standard 15 × 4 grid (strike-major). Masked
 points are NaN. `vols` and `ci_half` hold 60 values; `ci_half` may be null.

 # Safety
 `params` and `z0` (`n_z` values) must be valid; output arrays must hold 60 values.
 */
QrhStatus qrh_price_spx_surface(const QrhKernel *k,
                                const QrhParams *params,
                                const double *z0,
                                size_t n_z,
                                size_t paths,
                                double dt,
                                uint64_t seed,
                                double *vols,
                                double *ci_half);

/*
 Loads a network file written by the `train` command.

 # Safety
 `path` must be a NUL-terminated string and `out` valid.
 */
QrhStatus qrh_network_load(const char *path, QrhNetwork **out);

/*
 # Safety
 `net` must come from this library and not be used afterwards. Null is ignored.
 */
void qrh_network_free(QrhNetwork *net);

/*
 Input and output widths.

 # Safety
 All pointers must be valid.
 */
QrhStatus qrh_network_shape(const QrhNetwork *net, size_t *inputs, size_t *outputs);

/*
 Raw-space prediction.

 # Safety
 `x` must hold `n_x` values and `y` `n_y` values.
 */
QrhStatus qrh_network_predict(const QrhNetwork *net,
                              const double *x,
                              size_t n_x,
                              double *y,
                              size_t n_y);

/*
 Hedge ratio from the forward SPX network.

 # Safety
 `z` must hold `n_z` values; other pointers valid.
 */
QrhStatus qrh_hedge_ratio_mtp(const QrhNetwork *net,
                              const QrhParams *params,
                              double spot,
                              const double *z,
                              size_t n_z,
                              double strike,
                              double tau,
                              QrhRatio *out);

/*
 Hedge ratio from the differential network trained for `strike`.

 # Safety
 As [`qrh_hedge_ratio_mtp`].
 */
QrhStatus qrh_hedge_ratio_dml(const QrhNetwork *net,
                              const QrhParams *params,
                              double spot,
                              const double *z,
                              size_t n_z,
                              double strike,
                              double tau,
                              QrhRatio *out);

/*
 Fits `(ω, z_0)` to target vols (60 each, strike-major, NaN = missing) with the
 forward networks. `params` receives 15 values; `objective` may be null.

 # Safety
 Arrays must hold the stated number of values.
 */
QrhStatus qrh_calibrate_mtp(const QrhNetwork *net_spx,
                            const QrhNetwork *net_vix,
                            const double *target_spx,
                            const double *target_vix,
                            size_t restarts,
                            double *params,
                            double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QRHESTON_H */

#ifndef UNCONFOUND_H
#define UNCONFOUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UcPropensity {
  /**
   * Proportion treated.
   */
  UC_PROPENSITY_CONSTANT = 0,
  /**
   * Logistic regression on the covariates.
   */
  UC_PROPENSITY_LOGISTIC = 1,
} UcPropensity;

typedef enum UcSource {
  UC_SOURCE_RCT = 0,
  UC_SOURCE_OBS = 1,
} UcSource;

typedef enum UcStatus {
  UC_STATUS_OK = 0,
  UC_STATUS_NULL_POINTER = 1,
  UC_STATUS_INVALID_ARGUMENT = 2,
  UC_STATUS_DOMAIN = 3,
  UC_STATUS_ESTIMATION = 4,
  UC_STATUS_CONVERGENCE = 5,
  UC_STATUS_SEPARATION = 6,
  UC_STATUS_LINEAR_ALGEBRA = 7,
  UC_STATUS_TEST = 8,
  UC_STATUS_RULE = 9,
  UC_STATUS_INGEST = 10,
  UC_STATUS_CONFIG = 11,
  UC_STATUS_IO = 12,
  UC_STATUS_PANIC = 13,
} UcStatus;

/**
 * Opaque bootstrap distribution handle.
 */
typedef struct UcBootstrap UcBootstrap;

/**
 * Opaque dataset handle.
 */
typedef struct UcDataset UcDataset;

typedef struct UcIpwEstimate {
  double omega_hat;
  /**
   * Variance of `omega_hat`.
   */
  double var_hat;
  size_t n_treated;
  size_t n_control;
  double mu1_hat;
  double mu0_hat;
} UcIpwEstimate;

typedef struct UcZTest {
  double z;
  double p_value;
  double alpha;
  bool reject;
  struct UcIpwEstimate omega_r;
  struct UcIpwEstimate omega_o;
} UcZTest;

typedef struct UcBootstrapDecision {
  double t_observed;
  double q_lo;
  double q_hi;
  double alpha;
  bool reject;
  size_t b;
  double p_value;
} UcBootstrapDecision;

typedef struct UcHInputs {
  double delta_a;
  double delta_x;
  double sigma_u;
  double sigma_x;
  double c;
  double eta;
  double p_o;
  double p_r;
  double n;
  double kappa;
} UcHInputs;

typedef struct UcLinearScenario {
  double beta0;
  double beta_a;
  double beta_x;
  double beta_u;
  double delta0;
  double delta_a;
  double delta_x;
  double sigma_eps;
  double sigma_u;
  double mu_x;
  double sigma_x;
  double p_o;
  double p_r;
  size_t n;
  size_t m;
} UcLinearScenario;

typedef struct UcPowerReport {
  double h;
  double power;
  double c;
  double eta;
  double kappa;
} UcPowerReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap` bytes, into `buf`. Returns the full message length
 * excluding the terminator, or 0 when there is no message. `buf` may be
 * null to query the length.
 */
size_t uc_last_error_message(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uc_version(void);

enum UcStatus uc_normal_cdf(double z, double *result);

enum UcStatus uc_normal_quantile(double p, double *result);

/**
 * Builds a dataset from `n` units: treatment `a` (0 or 1), row-major
 * covariates `x` (`n * dim` values, may be null when `dim` is 0), and
 * outcomes `y`. Covariates are named `x1..x<dim>`.
 */
enum UcStatus uc_dataset_new(const uint8_t *a,
                             const double *x,
                             const double *y,
                             size_t n,
                             size_t dim,
                             enum UcSource source,
                             struct UcDataset **result);

void uc_dataset_free(struct UcDataset *dataset);

enum UcStatus uc_dataset_len(const struct UcDataset *dataset, size_t *result);

/**
 * Inverse-propensity-weighted contrast with the chosen propensity model,
 * fitted on the same data.
 */
enum UcStatus uc_ipw_estimate(const struct UcDataset *data,
                              enum UcPropensity propensity,
                              struct UcIpwEstimate *result);

enum UcStatus uc_z_test(const struct UcDataset *rct,
                        const struct UcDataset *obs,
                        double alpha,
                        struct UcZTest *result);

/**
 * Draws `b` paired resamples with the given seed. Decide at any level
 * with [`uc_bootstrap_decide`].
 */
enum UcStatus uc_bootstrap_run(const struct UcDataset *rct,
                               const struct UcDataset *obs,
                               size_t b,
                               uint64_t seed,
                               struct UcBootstrap **result);

enum UcStatus uc_bootstrap_decide(const struct UcBootstrap *boot,
                                  double alpha,
                                  struct UcBootstrapDecision *result);

/**
 * Copies up to `cap` replicate statistics, in draw order, into `buf` and
 * stores the total count in `count`. `buf` may be null to query the count.
 */
enum UcStatus uc_bootstrap_replicates(const struct UcBootstrap *boot,
                                      double *buf,
                                      size_t cap,
                                      size_t *count);

void uc_bootstrap_free(struct UcBootstrap *boot);

enum UcStatus uc_h_function(const struct UcHInputs *inputs, double *result);

/**
 * Fills `result` with the library's default linear scenario.
 */
enum UcStatus uc_linear_scenario_default(struct UcLinearScenario *result);

enum UcStatus uc_analytic_power(const struct UcLinearScenario *scenario,
                                double alpha,
                                struct UcPowerReport *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNCONFOUND_H */

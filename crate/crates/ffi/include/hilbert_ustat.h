#ifndef HILBERT_USTAT_H
#define HILBERT_USTAT_H

#include <stddef.h>
#include <stdint.h>

typedef enum HusStatus {
  HUS_STATUS_OK = 0,
  HUS_STATUS_NULL_POINTER = 1,
  HUS_STATUS_INVALID_ARGUMENT = 2,
  HUS_STATUS_CONFIG = 3,
  HUS_STATUS_HYPOTHESIS_FAILED = 4,
  HUS_STATUS_IO = 5,
  HUS_STATUS_OUT_OF_RANGE = 6,
  HUS_STATUS_PANIC = 7,
} HusStatus;

// Kernel `h: S x S -> R^d`.
typedef struct HusKernel HusKernel;

// Stationary process.
typedef struct HusModel HusModel;

// Prefix path `U_0, ..., U_n`.
typedef struct HusPath HusPath;

// Exponents that a theorem does not use are NaN.
typedef struct HusRatePlan {
  double gamma;
  double gamma_prime;
  double a;
  double b;
  double normalization;
} HusRatePlan;

typedef struct HusBoundInputs {
  double r;
  uintptr_t q;
  uintptr_t n;
  double x;
  // Truncation level; any non-finite value means no truncation.
  double level;
  double m_le;
  double m_gt;
  double sup_lag_mean;
  double beta_q;
  double c_r;
} HusBoundInputs;

typedef struct HusBoundReport {
  double total;
  double moment;
  double truncation;
  double lag_mean;
  double mixing;
} HusBoundReport;

typedef struct HusHypothesis {
  // 1 when the mixing condition holds.
  int32_t pass;
  double margin;
} HusHypothesis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hus_version(void);

// Copies the last error message of this thread into `buf` (truncated, NUL-terminated).
// Returns the buffer size needed for the whole message, or 0 when there is no error.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
uintptr_t hus_last_error(char *buf, uintptr_t len);

// # Safety
// `s` must be null or a string returned by this library.
void hus_string_free(char *s);

// Two-state chain with flip probabilities `a` (0 to 1) and `b` (1 to 0).
//
// # Safety
// `out` must be valid for writes.
enum HusStatus hus_model_two_state(double a, double b, struct HusModel **out);

// Model from its JSON description, e.g. `{"kind":"ar1","rho":0.5,"noise_variance":1}`.
//
// # Safety
// `json` must be a NUL-terminated string, `out` valid for writes.
enum HusStatus hus_model_from_json(const char *json, struct HusModel **out);

// # Safety
// `m` must be null or a handle from this library, not yet freed.
void hus_model_free(struct HusModel *m);

// `beta(k)`: exact for finite models, the closed-form bound for AR(1).
//
// # Safety
// `m` must be a live handle, `out` valid for writes.
enum HusStatus hus_model_beta(const struct HusModel *m, uintptr_t k, double *out);

// Kernel on `states` labels from a table laid out as `values[(i * states + j) * dim + c]`.
//
// # Safety
// `values` must hold `states * states * dim` doubles, `out` valid for writes.
enum HusStatus hus_kernel_table(uintptr_t states,
                                uintptr_t dim,
                                const double *values,
                                struct HusKernel **out);

// Kernel from its JSON description, e.g. `{"name":"spatial_sign","dim":3}`.
//
// # Safety
// `json` must be a NUL-terminated string, `out` valid for writes.
enum HusStatus hus_kernel_from_json(const char *json, struct HusKernel **out);

// Output dimension; 0 for a null handle.
//
// # Safety
// `k` must be null or a live handle.
uintptr_t hus_kernel_dim(const struct HusKernel *k);

// # Safety
// `k` must be null or a handle from this library, not yet freed.
void hus_kernel_free(struct HusKernel *k);

// Simulates `X_1..X_n` from `model` with `seed` and returns the prefix U-statistics.
//
// # Safety
// Handles must be live, `out` valid for writes.
enum HusStatus hus_ustat_simulate(const struct HusModel *model,
                                  const struct HusKernel *kernel,
                                  uintptr_t n,
                                  uint64_t seed,
                                  struct HusPath **out);

// Sample size `n` of the path; 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
uintptr_t hus_path_len(const struct HusPath *p);

// Copies `U_k` (0 <= k <= n) into `buf`, which must hold `len >= dim` doubles.
//
// # Safety
// `p` must be a live handle, `buf` valid for `len` writes.
enum HusStatus hus_path_value(const struct HusPath *p, uintptr_t k, double *buf, uintptr_t len);

// # Safety
// `p` must be null or a handle from this library, not yet freed.
void hus_path_free(struct HusPath *p);

// Exponent schedule of `theorem` ("T2".."T5" or "FCLT").
//
// # Safety
// `theorem` must be a NUL-terminated string, `out` valid for writes.
enum HusStatus hus_rate_plan(const char *theorem,
                             double p,
                             double delta,
                             double eta,
                             struct HusRatePlan *out);

// Four-term deviation bound.
//
// # Safety
// `inputs` must be readable, `out` valid for writes.
enum HusStatus hus_deviation_bound(const struct HusBoundInputs *inputs, struct HusBoundReport *out);

// Checks the mixing condition of `theorem` against the beta tail of `model`.
// A failed condition is reported through `out->pass`, not the status.
//
// # Safety
// `model` must be a live handle, `theorem` a NUL-terminated string, `out` valid for writes.
enum HusStatus hus_hypothesis_check(const struct HusModel *model,
                                    const char *theorem,
                                    double p,
                                    double delta,
                                    double eta,
                                    struct HusHypothesis *out);

// Runs `experiment` ("fclt", "slln", "slln-degenerate" or "bound") from a TOML manifest.
// Returns the JSON report in `*out_json`; when `out_dir` is non-null the CSV and JSON
// files are written there as well.
//
// # Safety
// String arguments must be NUL-terminated (`out_dir` may be null), `out_json` valid for writes.
enum HusStatus hus_run_experiment(const char *manifest_toml,
                                  const char *experiment,
                                  const char *out_dir,
                                  char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HILBERT_USTAT_H */

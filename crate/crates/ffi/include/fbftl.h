#ifndef FBFTL_H
#define FBFTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum FbftlStatus {
  FBFTL_STATUS_OK = 0,
  FBFTL_STATUS_NULL_POINTER = 1,
  FBFTL_STATUS_INVALID_ARGUMENT = 2,
  FBFTL_STATUS_CONFIG = 3,
  FBFTL_STATUS_NUMERIC = 4,
  /**
   * A result does not fit the output type.
   */
  FBFTL_STATUS_OVERFLOW = 5,
  FBFTL_STATUS_BUFFER_TOO_SMALL = 6,
  FBFTL_STATUS_IO = 7,
  FBFTL_STATUS_PANIC = 8,
} FbftlStatus;

typedef enum FbftlMethod {
  FBFTL_METHOD_FL = 0,
  FBFTL_METHOD_FTL_FULL = 1,
  FBFTL_METHOD_FTL_HEAD = 2,
  FBFTL_METHOD_FBFTL = 3,
} FbftlMethod;

/**
 * Parsed architecture.
 */
typedef struct FbftlArchitecture FbftlArchitecture;

/**
 * Expected leakage at several client counts.
 */
typedef struct FbftlLeakageCurve FbftlLeakageCurve;

typedef struct FbftlParamCounts {
  uint64_t full;
  uint64_t head;
  uint64_t extractor;
  uint64_t cut_input;
  uint64_t cut_output;
} FbftlParamCounts;

/**
 * Calculator inputs; parameter counts come from the architecture handle.
 */
typedef struct FbftlPayloadInputs {
  /**
   * 0 uses the architecture's own bit width.
   */
  uint64_t bit_width;
  uint64_t clients_per_round;
  uint64_t fl_batches;
  uint64_t ftl_full_batches;
  uint64_t ftl_head_batches;
  uint64_t total_samples;
  uint64_t sample_count_bits;
  uint64_t label_bits;
} FbftlPayloadInputs;

typedef struct FbftlLeakagePoint {
  uint64_t clients;
  double mean_bits;
  double stderr_bits;
} FbftlLeakagePoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *fbftl_last_error(void);

/**
 * Parses an architecture from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FbftlStatus fbftl_architecture_from_toml(const char *toml,
                                              struct FbftlArchitecture **out_arch);

/**
 * Loads an architecture TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FbftlStatus fbftl_architecture_load(const char *path, struct FbftlArchitecture **out_arch);

/**
 * # Safety
 * `arch` must come from this library and not be used afterwards. Null is a no-op.
 */
void fbftl_architecture_free(struct FbftlArchitecture *arch);

/**
 * # Safety
 * `arch` and `out` must be valid pointers.
 */
enum FbftlStatus fbftl_architecture_counts(const struct FbftlArchitecture *arch,
                                           struct FbftlParamCounts *out_counts);

/**
 * Total uplink and downlink bits of `method` over a whole training run.
 * Fails with `Overflow` when a total exceeds 2^64 - 1.
 *
 * # Safety
 * All pointers must be valid.
 */
enum FbftlStatus fbftl_payload_totals(const struct FbftlArchitecture *arch,
                                      const struct FbftlPayloadInputs *inputs,
                                      enum FbftlMethod method,
                                      uint64_t *out_uplink_bits,
                                      uint64_t *out_downlink_bits);

/**
 * Writes a bit count with a one-decimal b/Kb/Mb/Gb/Tb unit as a
 * NUL-terminated string into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum FbftlStatus fbftl_format_bits(uint64_t bits, char *buf, size_t len);

/**
 * Prior entropy in bits of a `batch`-sample type under the label
 * distribution `probs` (length `classes`, null for uniform). Exact when
 * the types can be enumerated, otherwise a seeded Monte Carlo estimate;
 * `out_exact` (nullable) reports which.
 *
 * # Safety
 * `probs`, when non-null, must point to `classes` doubles; `out_bits` must
 * be valid.
 */
enum FbftlStatus fbftl_prior_entropy(const double *probs,
                                     size_t classes,
                                     uint64_t batch,
                                     uint64_t seed,
                                     double *out_bits,
                                     bool *out_exact);

/**
 * Monte Carlo expected leakage for every entry of `clients`.
 *
 * # Safety
 * `probs` as for [`fbftl_prior_entropy`]; `clients` must point to
 * `n_clients` values; `out_curve` must be valid.
 */
enum FbftlStatus fbftl_leakage_curve_new(const double *probs,
                                         size_t classes,
                                         uint64_t batch,
                                         const uint64_t *clients,
                                         size_t n_clients,
                                         size_t repetitions,
                                         uint64_t seed,
                                         struct FbftlLeakageCurve **out_curve);

/**
 * # Safety
 * `curve` must come from this library and not be used afterwards. Null is a no-op.
 */
void fbftl_leakage_curve_free(struct FbftlLeakageCurve *curve);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `curve` must be null or valid.
 */
size_t fbftl_leakage_curve_len(const struct FbftlLeakageCurve *curve);

/**
 * # Safety
 * `curve` and `out_bits` must be valid.
 */
enum FbftlStatus fbftl_leakage_curve_prior_bits(const struct FbftlLeakageCurve *curve,
                                                double *out_bits);

/**
 * # Safety
 * `curve` and `out_point` must be valid.
 */
enum FbftlStatus fbftl_leakage_curve_point(const struct FbftlLeakageCurve *curve,
                                           size_t index,
                                           struct FbftlLeakagePoint *out_point);

/**
 * Exhaustively checks that the posterior of each client's type given the
 * shuffled multiset equals its empirical frequency. `out_mismatches`
 * receives the number of (observation, type) pairs that disagree.
 *
 * # Safety
 * `out_mismatches` must be valid.
 */
enum FbftlStatus fbftl_posterior_identity_check(size_t classes,
                                                uint64_t batch,
                                                uint32_t clients,
                                                uint64_t *out_mismatches);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBFTL_H */

#ifndef DPDME_H
#define DPDME_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every entry point.
typedef enum DpdmeStatus {
  DPDME_STATUS_OK = 0,
  DPDME_STATUS_INVALID_ARGUMENT = 1,
  DPDME_STATUS_INVALID_CONFIG = 2,
  DPDME_STATUS_WIRE = 3,
  DPDME_STATUS_PROTOCOL = 4,
  DPDME_STATUS_INFEASIBLE = 5,
  DPDME_STATUS_NULL_POINTER = 6,
  DPDME_STATUS_BUFFER_TOO_SMALL = 7,
  DPDME_STATUS_PANIC = 8,
} DpdmeStatus;

// Server-side accumulator for one round.
typedef struct DpdmeAggregator DpdmeAggregator;

// Protocol configuration shared by clients and server.
typedef struct DpdmeConfig DpdmeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call on the same thread.
const char *dpdme_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dpdme_version(void);

// Creates a configuration; `p = p_num / p_den`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DpdmeStatus dpdme_config_new(size_t n,
                                  size_t d,
                                  double clip_bound,
                                  uint32_t levels,
                                  uint32_t trials,
                                  uint32_t p_num,
                                  uint32_t p_den,
                                  double delta,
                                  bool rotate,
                                  uint64_t seed,
                                  struct DpdmeConfig **out);

// Releases a configuration. Null is ignored.
//
// # Safety
// `cfg` must come from [`dpdme_config_new`] and not be used afterwards.
void dpdme_config_free(struct DpdmeConfig *cfg);

// Size in bytes of every client message under `cfg`.
//
// # Safety
// `cfg` must be a live handle and `out_len` writable.
enum DpdmeStatus dpdme_message_len(const struct DpdmeConfig *cfg, size_t *out_len);

// Privacy of one run: epsilon (infinite when a condition fails) and the total delta.
//
// # Safety
// `cfg` must be a live handle and the outputs writable.
enum DpdmeStatus dpdme_config_privacy(const struct DpdmeConfig *cfg,
                                      double *out_epsilon,
                                      double *out_delta_total);

// Upper bound on the mean squared error and the total bits sent per run.
//
// # Safety
// `cfg` must be a live handle and the outputs writable.
enum DpdmeStatus dpdme_config_cost(const struct DpdmeConfig *cfg,
                                   double *out_mse_bound,
                                   uint64_t *out_comm_bits);

// Encodes the `d` values at `x` for client `client_index` into `buf`.
// On success `*out_written` holds the message length; if `buf_len` is too
// small the call fails with `BufferTooSmall` and reports the needed length.
//
// # Safety
// `cfg` must be a live handle, `x` must point to `d` doubles, `buf` to
// `buf_len` writable bytes and `out_written` must be writable.
enum DpdmeStatus dpdme_client_encode(const struct DpdmeConfig *cfg,
                                     const double *x,
                                     size_t d,
                                     uint64_t client_index,
                                     uint8_t *buf,
                                     size_t buf_len,
                                     size_t *out_written);

// Creates an aggregator expecting the `n` messages of one run.
//
// # Safety
// `cfg` must be a live handle and `out` writable.
enum DpdmeStatus dpdme_aggregator_new(const struct DpdmeConfig *cfg, struct DpdmeAggregator **out);

// Adds one client message.
//
// # Safety
// `agg` must be a live handle and `bytes` must point to `len` readable bytes.
enum DpdmeStatus dpdme_aggregator_push(struct DpdmeAggregator *agg,
                                       const uint8_t *bytes,
                                       size_t len);

// Writes the `d`-dimensional mean estimate to `out`. The aggregator
// accepts no further messages afterwards but must still be freed.
//
// # Safety
// `agg` must be a live handle and `out` must point to `out_len` writable doubles.
enum DpdmeStatus dpdme_aggregator_finish(struct DpdmeAggregator *agg, double *out, size_t out_len);

// Releases an aggregator. Null is ignored.
//
// # Safety
// `agg` must come from [`dpdme_aggregator_new`] and not be used afterwards.
void dpdme_aggregator_free(struct DpdmeAggregator *agg);

// Epsilon of the Gaussian mechanism; `*out_precondition_ok` is false when
// `sigma` is below the level at which the bound is proven.
//
// # Safety
// The outputs must be writable.
enum DpdmeStatus dpdme_gaussian_epsilon(double delta_2,
                                        double sigma,
                                        double delta,
                                        double *out_epsilon,
                                        bool *out_precondition_ok);

// Epsilon of the Binomial mechanism with `trials` draws of probability `p`
// at scale `s`; infinite when a condition fails.
//
// # Safety
// The outputs must be writable.
enum DpdmeStatus dpdme_binomial_epsilon(uint64_t trials,
                                        double p,
                                        double s,
                                        size_t d,
                                        double delta,
                                        double delta_1,
                                        double delta_2,
                                        double delta_inf,
                                        double *out_epsilon,
                                        bool *out_conditions_ok);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPDME_H */

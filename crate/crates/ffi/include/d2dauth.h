#ifndef D2DAUTH_H
#define D2DAUTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Longest encoded message (M3/M4).
 */
#define D2D_MAX_MESSAGE_LEN 97

/**
 * Size of every key, hash, seed and CSI sample.
 */
#define D2D_BLOCK_LEN 32

typedef enum {
  D2D_STATUS_OK = 0,
  D2D_STATUS_NULL_POINTER = 1,
  D2D_STATUS_INVALID_ARGUMENT = 2,
  D2D_STATUS_BUFFER_TOO_SMALL = 3,
  D2D_STATUS_MALFORMED = 4,
  D2D_STATUS_UNKNOWN_EDGE = 5,
  D2D_STATUS_WRONG_GATEWAY = 6,
  D2D_STATUS_TAG_MISMATCH = 7,
  D2D_STATUS_AEAD_FAILURE = 8,
  D2D_STATUS_ACK_ZERO = 9,
  D2D_STATUS_CSI_MISMATCH = 10,
  D2D_STATUS_EXPONENT_ECHO_MISMATCH = 11,
  D2D_STATUS_COUNTER_MISMATCH = 12,
  D2D_STATUS_FUNCTION_MISMATCH = 13,
  D2D_STATUS_DUPLICATE_ENROLLMENT = 14,
  D2D_STATUS_OUT_OF_PHASE = 15,
  D2D_STATUS_EXPONENT_OUT_OF_BOUNDS = 16,
  D2D_STATUS_TIMEOUT = 17,
  D2D_STATUS_PANIC = 255,
} D2dStatus;

/**
 * Opaque edge-device handle.
 */
typedef struct D2dEdge D2dEdge;

/**
 * Opaque gateway handle.
 */
typedef struct D2dGateway D2dGateway;

/**
 * Session parameters, mirrored from the Rust `SessionConfig`.
 */
typedef struct {
  /**
   * Session lifetime T in milliseconds.
   */
  uint64_t session_duration_ms;
  /**
   * Interval between continuous-authentication rounds in milliseconds.
   */
  uint64_t ca_round_interval_ms;
  /**
   * Largest exponent drawn for the CA function (at least 2).
   */
  uint8_t exponent_max;
} D2dSessionConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated description of a status code.
 */
const char *d2d_status_str(D2dStatus status);

/**
 * SHA-256 of `data[0..len]` into `out[32]`.
 */
D2dStatus d2d_hash(const uint8_t *data, size_t len, uint8_t *out);

/**
 * `(t^a + t^b) mod 2^64`, with `a` and `b` checked against `[2, exponent_max]`.
 */
D2dStatus d2d_compute_f(uint64_t t, uint8_t a, uint8_t b, uint8_t exponent_max, uint64_t *out);

D2dStatus d2d_gateway_new(const uint8_t *gw_id,
                          size_t gw_id_len,
                          D2dSessionConfig cfg,
                          D2dGateway **out);

void d2d_gateway_free(D2dGateway *gw);

/**
 * Writes H(gateway id) to `out[32]`.
 */
D2dStatus d2d_gateway_id_hash(const D2dGateway *gw, uint8_t *out);

/**
 * Register an edge over the trusted setup path and return its provisioned
 * state as a new edge handle. `seed` is the 32-byte shared DRBG seed.
 */
D2dStatus d2d_gateway_enroll(D2dGateway *gw,
                             const uint8_t *edge_id,
                             size_t edge_id_len,
                             const uint8_t *seed,
                             D2dEdge **out);

/**
 * Handle M1 received with CSI `csi[32]`; writes M2.
 */
D2dStatus d2d_gateway_on_m1(D2dGateway *gw,
                            const uint8_t *msg,
                            size_t msg_len,
                            const uint8_t *csi,
                            uint8_t *out,
                            size_t out_cap,
                            size_t *out_len);

/**
 * Handle M3; writes M4.
 */
D2dStatus d2d_gateway_on_m3(D2dGateway *gw,
                            const uint8_t *msg,
                            size_t msg_len,
                            uint8_t *out,
                            size_t out_cap,
                            size_t *out_len);

/**
 * Handle M5 from the edge whose id hash is `edge_id_hash[32]`. On `D2D_OK`
 * the session is live and started at `now_ms`.
 */
D2dStatus d2d_gateway_on_m5(D2dGateway *gw,
                            const uint8_t *edge_id_hash,
                            const uint8_t *msg,
                            size_t msg_len,
                            uint64_t now_ms);

/**
 * Handle the edge's M6 and issue the first M7. `*expired` is set to 1 when
 * the M7 carries ack=0 and the session has been dropped.
 */
D2dStatus d2d_gateway_on_m6(D2dGateway *gw,
                            const uint8_t *edge_id_hash,
                            const uint8_t *msg,
                            size_t msg_len,
                            uint64_t now_ms,
                            uint8_t *out,
                            size_t out_cap,
                            size_t *out_len,
                            uint8_t *expired);

/**
 * Issue the next M7 once a round has completed. Call every CA interval.
 */
D2dStatus d2d_gateway_next_round(D2dGateway *gw,
                                 const uint8_t *edge_id_hash,
                                 uint64_t now_ms,
                                 uint8_t *out,
                                 size_t out_cap,
                                 size_t *out_len,
                                 uint8_t *expired);

/**
 * Check the edge's M8. `*ctr` receives the completed round's counter.
 */
D2dStatus d2d_gateway_on_m8(D2dGateway *gw,
                            const uint8_t *edge_id_hash,
                            const uint8_t *msg,
                            size_t msg_len,
                            uint64_t *ctr);

/**
 * Drop any handshake or session state held for an edge.
 */
D2dStatus d2d_gateway_abort(D2dGateway *gw, const uint8_t *edge_id_hash);

/**
 * Current session key for an edge; `D2D_OUT_OF_PHASE` if none is live.
 */
D2dStatus d2d_gateway_session_key(const D2dGateway *gw, const uint8_t *edge_id_hash, uint8_t *out);

/**
 * Rebuild an edge from stored enrollment output (`d2dauth enroll` prints
 * `e_init`, `seed` and `draw_index`).
 */
D2dStatus d2d_edge_new(const uint8_t *edge_id,
                       size_t edge_id_len,
                       const uint8_t *gw_id_hash,
                       const uint8_t *e_init,
                       const uint8_t *seed,
                       uint64_t seed_draw_index,
                       D2dSessionConfig cfg,
                       D2dEdge **out);

void d2d_edge_free(D2dEdge *edge);

/**
 * Writes H(edge id) to `out[32]`; the gateway keys its sessions by this.
 */
D2dStatus d2d_edge_id_hash(const D2dEdge *edge, uint8_t *out);

/**
 * Start (or restart) mutual authentication; writes M1.
 */
D2dStatus d2d_edge_begin_auth(D2dEdge *edge, uint8_t *out, size_t out_cap, size_t *out_len);

/**
 * Handle M2 received with CSI `csi[32]`; writes M3.
 */
D2dStatus d2d_edge_on_m2(D2dEdge *edge,
                         const uint8_t *msg,
                         size_t msg_len,
                         const uint8_t *csi,
                         uint8_t *out,
                         size_t out_cap,
                         size_t *out_len);

/**
 * Verify the gateway's M4; writes M5. On `D2D_OK` the edge holds the new session key.
 */
D2dStatus d2d_edge_on_m4(D2dEdge *edge,
                         const uint8_t *msg,
                         size_t msg_len,
                         uint8_t *out,
                         size_t out_cap,
                         size_t *out_len);

/**
 * Open continuous authentication for this session; writes M6.
 */
D2dStatus d2d_edge_ca_start(D2dEdge *edge, uint8_t *out, size_t out_cap, size_t *out_len);

/**
 * Answer a CA challenge. Writes M8 and sets `*reauth = 0`, or, when the
 * gateway signalled expiry, writes nothing (`*out_len = 0`) and sets
 * `*reauth = 1`: call `d2d_edge_begin_auth` next.
 */
D2dStatus d2d_edge_on_m7(D2dEdge *edge,
                         const uint8_t *msg,
                         size_t msg_len,
                         uint8_t *out,
                         size_t out_cap,
                         size_t *out_len,
                         uint8_t *reauth);

/**
 * Drop the current handshake so `d2d_edge_begin_auth` can start over.
 */
D2dStatus d2d_edge_abort(D2dEdge *edge);

/**
 * Current session key; `D2D_OUT_OF_PHASE` before the first authentication.
 */
D2dStatus d2d_edge_session_key(const D2dEdge *edge, uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* D2DAUTH_H */

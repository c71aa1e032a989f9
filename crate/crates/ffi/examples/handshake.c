/* Mutual authentication plus one CA round between an in-process edge and gateway. */
#include <stdio.h>
#include <string.h>

#include "d2dauth.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        D2dStatus s_ = (call);                                               \
        if (s_ != D2D_STATUS_OK) {                                           \
            fprintf(stderr, "%s: %s\n", #call, d2d_status_str(s_));         \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    D2dSessionConfig cfg = {.session_duration_ms = 10000, .ca_round_interval_ms = 1000, .exponent_max = 16};
    const uint8_t gw_id[] = "gateway-c";
    const uint8_t edge_id[] = "edge-c";
    uint8_t seed[D2D_BLOCK_LEN], csi_gw[D2D_BLOCK_LEN], csi_edge[D2D_BLOCK_LEN], eh[D2D_BLOCK_LEN];
    memset(seed, 0x11, sizeof seed);
    memset(csi_gw, 0x22, sizeof csi_gw);
    memset(csi_edge, 0x33, sizeof csi_edge);

    D2dGateway *gw = NULL;
    D2dEdge *edge = NULL;
    CHECK(d2d_gateway_new(gw_id, sizeof gw_id - 1, cfg, &gw));
    CHECK(d2d_gateway_enroll(gw, edge_id, sizeof edge_id - 1, seed, &edge));
    CHECK(d2d_edge_id_hash(edge, eh));

    uint8_t a[D2D_MAX_MESSAGE_LEN], b[D2D_MAX_MESSAGE_LEN];
    size_t a_len = 0, b_len = 0;
    CHECK(d2d_edge_begin_auth(edge, a, sizeof a, &a_len));
    CHECK(d2d_gateway_on_m1(gw, a, a_len, csi_gw, b, sizeof b, &b_len));
    CHECK(d2d_edge_on_m2(edge, b, b_len, csi_edge, a, sizeof a, &a_len));
    CHECK(d2d_gateway_on_m3(gw, a, a_len, b, sizeof b, &b_len));
    CHECK(d2d_edge_on_m4(edge, b, b_len, a, sizeof a, &a_len));
    CHECK(d2d_gateway_on_m5(gw, eh, a, a_len, 0));

    uint8_t k_edge[D2D_BLOCK_LEN], k_gw[D2D_BLOCK_LEN];
    CHECK(d2d_edge_session_key(edge, k_edge));
    CHECK(d2d_gateway_session_key(gw, eh, k_gw));
    if (memcmp(k_edge, k_gw, D2D_BLOCK_LEN) != 0) {
        fprintf(stderr, "session keys differ\n");
        return 1;
    }

    uint8_t expired = 0, reauth = 0;
    uint64_t ctr = 0;
    CHECK(d2d_edge_ca_start(edge, a, sizeof a, &a_len));
    CHECK(d2d_gateway_on_m6(gw, eh, a, a_len, 0, b, sizeof b, &b_len, &expired));
    CHECK(d2d_edge_on_m7(edge, b, b_len, a, sizeof a, &a_len, &reauth));
    CHECK(d2d_gateway_on_m8(gw, eh, a, a_len, &ctr));
    if (expired || reauth || ctr != 2) {
        fprintf(stderr, "unexpected round state\n");
        return 1;
    }

    D2dStatus s = d2d_gateway_on_m8(gw, eh, a, a_len, &ctr);
    printf("replayed M8: %s\n", d2d_status_str(s));

    d2d_edge_free(edge);
    d2d_gateway_free(gw);
    printf("session keys match, round %llu complete\n", (unsigned long long)ctr);
    return 0;
}

#include "hvat/analysis.hpp"

namespace hvat {

uint64_t horizontal_param_form(size_t d_model, size_t d_v) {
    const uint64_t d = d_model, dv = d_v;
    return dv * dv + d * dv + dv + 1;  // W^{A1} + W^{A2} + W^B + b^B
}

uint64_t vertical_param_form(size_t d_model, size_t d_a) {
    const uint64_t d = d_model, da = d_a;
    return 3 * d * da + d;  // W^{U1} + W^{U2} + W^U + b^U
}

FlopReport estimate_flops(const AttentionConfig& cfg, size_t ffn_width, size_t n) {
    cfg.validate();
    const uint64_t N = n;
    const uint64_t d = cfg.d_model;
    const uint64_t m = cfg.n_heads;
    const uint64_t dk = cfg.d_k;
    const uint64_t dv = cfg.d_v;
    const uint64_t da = cfg.resolved_d_a();
    const uint64_t f = ffn_width;

    FlopReport r;
    r.n = n;

    // One head: Q/K/V projections, scaled scores, softmax, weighted sum.
    const uint64_t per_head = 2 * N * d * dk    // X W^Q
                              + 2 * N * d * dk  // X W^K
                              + 2 * N * d * dv  // X W^V
                              + 2 * N * N * dk  // Q K^T
                              + N * N           // 1/sqrt(dk) scaling
                              + 3 * N * N       // row softmax
                              + 2 * N * N * dv; // attn V
    r.sdpa_total = m * per_head + 2 * N * (m * dv) * d;  // + concat-projection W^M

    // Alpha pipeline: shared X W^{A2}, then per head
    // ReLU(H W^{A1} + X W^{A2}) -> W^B/b^B squash -> token mean; softmax over
    // heads; finally one scalar-broadcast multiply per head output.
    const uint64_t per_head_alpha = 2 * N * dv * dv  // H_m W^{A1}
                                    + N * dv         // + X W^{A2}
                                    + N * dv         // ReLU
                                    + 2 * N * dv     // A_m W^B
                                    + N              // + b^B
                                    + N + 1;         // token mean
    r.horizontal_extra = 2 * N * d * dv              // shared X W^{A2}
                         + m * per_head_alpha
                         + 3 * m                     // softmax over head scores
                         + m * N * dv;               // alpha_m * H_m
    // Beta pipeline: two squeezes, ReLU, token mean, expansion, sigmoid, gate.
    r.vertical_extra = 2 * N * d * da    // X W^{U1}
                       + 2 * N * d * da  // Y W^{U2}
                       + N * da          // add
                       + N * da          // ReLU
                       + N * da + da     // token mean
                       + 2 * da * d      // u W^U
                       + d               // + b^U
                       + d               // sigmoid
                       + N * d;          // beta * Y
    r.ffn = 2 * N * d * f     // X W1
            + N * f           // + b1
            + N * f           // ReLU
            + 2 * N * f * d   // W2
            + N * d;          // + b2
    return r;
}

}  // namespace hvat

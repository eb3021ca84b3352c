#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hvat/tensor.hpp"

namespace hvat {

/// Widths of one attention block. d_a == 0 means "use the default squeeze
/// width", i.e. max(1, d_model/4).
struct AttentionConfig {
    size_t d_model = 512;
    size_t n_heads = 8;
    size_t d_k = 64;
    size_t d_v = 64;
    size_t d_a = 0;

    size_t resolved_d_a() const { return d_a == 0 ? std::max<size_t>(1, d_model / 4) : d_a; }

    void validate() const {
        if (d_model < 1) throw ConfigError("attention config: d_model must be >= 1");
        if (n_heads < 1) throw ConfigError("attention config: n_heads must be >= 1");
        if (d_k < 1) throw ConfigError("attention config: d_k must be >= 1");
        if (d_v < 1) throw ConfigError("attention config: d_v must be >= 1");
        const size_t da = resolved_d_a();
        if (da < 1) throw ConfigError("attention config: d_a must be >= 1");
        if (da >= d_model) {
            throw ConfigError("attention config: d_a (" + std::to_string(da) +
                              ") must be < d_model (" + std::to_string(d_model) + ")");
        }
    }
};

enum class BlockVariant { baseline, horizontal, vertical, both };

inline const char* to_string(BlockVariant v) {
    switch (v) {
        case BlockVariant::baseline: return "baseline";
        case BlockVariant::horizontal: return "horizontal";
        case BlockVariant::vertical: return "vertical";
        case BlockVariant::both: return "both";
    }
    return "?";
}

inline BlockVariant parse_variant(const std::string& s) {
    if (s == "baseline") return BlockVariant::baseline;
    if (s == "horizontal") return BlockVariant::horizontal;
    if (s == "vertical") return BlockVariant::vertical;
    if (s == "both") return BlockVariant::both;
    throw ConfigError("unknown variant '" + s +
                      "' (expected baseline|horizontal|vertical|both)");
}

inline bool variant_has_horizontal(BlockVariant v) {
    return v == BlockVariant::horizontal || v == BlockVariant::both;
}
inline bool variant_has_vertical(BlockVariant v) {
    return v == BlockVariant::vertical || v == BlockVariant::both;
}

// ---------------------------------------------------------------------------
// parameter structures
// ---------------------------------------------------------------------------

template <typename S>
struct HeadParams {
    Tensor<S> wq;  // [D, d_k]
    Tensor<S> wk;  // [D, d_k]
    Tensor<S> wv;  // [D, d_v]
};

/// Head re-weighting network: per-head features through a shared pair of
/// projections, squashed to one score per head, softmaxed across heads.
template <typename S>
struct HorizontalParams {
    Tensor<S> w_a1;  // [d_v, d_v]
    Tensor<S> w_a2;  // [D, d_v]
    Tensor<S> w_b;   // [d_v, 1]
    Tensor<S> b_b;   // [1]
};

/// Channel gating network: squeeze both streams to d_a, pool over tokens,
/// expand back to D through a sigmoid.
template <typename S>
struct VerticalParams {
    Tensor<S> w_u1;  // [D, d_a]
    Tensor<S> w_u2;  // [D, d_a]
    Tensor<S> w_u;   // [d_a, D]
    Tensor<S> b_u;   // [D]
};

template <typename S>
struct AttentionParams {
    std::vector<HeadParams<S>> heads;
    Tensor<S> w_m;  // [M*d_v, D]
    std::optional<HorizontalParams<S>> horizontal;
    std::optional<VerticalParams<S>> vertical;
};

template <typename S>
struct FeedForwardParams {
    Tensor<S> w1;  // [D, F]
    Tensor<S> b1;  // [F]
    Tensor<S> w2;  // [F, D]
    Tensor<S> b2;  // [D]
};

template <typename S>
struct LayerNormParams {
    Tensor<S> gain;  // [D]
    Tensor<S> bias;  // [D]
};

/// One full block: attention sublayer (+ optional cross-attention sublayer
/// for decoder use) and the position-wise feed-forward sublayer, each with
/// its own residual + layer norm.
template <typename S>
struct TransformerBlockParams {
    AttentionParams<S> self_attn;
    LayerNormParams<S> ln1;
    std::optional<AttentionParams<S>> cross_attn;
    std::optional<LayerNormParams<S>> ln_cross;
    FeedForwardParams<S> ffn;
    LayerNormParams<S> ln2;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskedLogit = -1e9;  // stand-in for -inf; keeps softmax backward NaN-free

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> init_matrix(size_t rows, size_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Tensor<S> t = Tensor<S>::zeros({rows, cols});
    t.fill_uniform(rng, -bound, bound);
    t.set_requires_grad(true);
    return t;
}

template <typename S>
Tensor<S> init_zeros(std::vector<size_t> shape) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

/// Deterministic given rng state; draw order is fixed (heads in index order,
/// then the output projection, then horizontal, then vertical). The final
/// stage of each augmentation network starts at zero so the initial alpha is
/// uniform and the initial beta is 0.5.
template <typename S>
AttentionParams<S> make_attention_params(const AttentionConfig& cfg, BlockVariant variant,
                                         Rng& rng) {
    cfg.validate();
    AttentionParams<S> p;
    p.heads.reserve(cfg.n_heads);
    for (size_t m = 0; m < cfg.n_heads; ++m) {
        HeadParams<S> h;
        h.wq = init_matrix<S>(cfg.d_model, cfg.d_k, rng);
        h.wk = init_matrix<S>(cfg.d_model, cfg.d_k, rng);
        h.wv = init_matrix<S>(cfg.d_model, cfg.d_v, rng);
        p.heads.push_back(std::move(h));
    }
    p.w_m = init_matrix<S>(cfg.n_heads * cfg.d_v, cfg.d_model, rng);
    if (variant_has_horizontal(variant)) {
        HorizontalParams<S> hp;
        hp.w_a1 = init_matrix<S>(cfg.d_v, cfg.d_v, rng);
        hp.w_a2 = init_matrix<S>(cfg.d_model, cfg.d_v, rng);
        hp.w_b = init_zeros<S>({cfg.d_v, 1});
        hp.b_b = init_zeros<S>({1});
        p.horizontal = std::move(hp);
    }
    if (variant_has_vertical(variant)) {
        const size_t da = cfg.resolved_d_a();
        VerticalParams<S> vp;
        vp.w_u1 = init_matrix<S>(cfg.d_model, da, rng);
        vp.w_u2 = init_matrix<S>(cfg.d_model, da, rng);
        vp.w_u = init_zeros<S>({da, cfg.d_model});
        vp.b_u = init_zeros<S>({cfg.d_model});
        p.vertical = std::move(vp);
    }
    return p;
}

template <typename S>
FeedForwardParams<S> make_ffn_params(size_t d_model, size_t ffn_width, Rng& rng) {
    FeedForwardParams<S> p;
    p.w1 = init_matrix<S>(d_model, ffn_width, rng);
    p.b1 = init_zeros<S>({ffn_width});
    p.w2 = init_matrix<S>(ffn_width, d_model, rng);
    p.b2 = init_zeros<S>({d_model});
    return p;
}

template <typename S>
LayerNormParams<S> make_layer_norm_params(size_t d) {
    LayerNormParams<S> p;
    p.gain = Tensor<S>::full({d}, S(1));
    p.gain.set_requires_grad(true);
    p.bias = init_zeros<S>({d});
    return p;
}

template <typename S>
TransformerBlockParams<S> make_block_params(const AttentionConfig& cfg, BlockVariant variant,
                                            size_t ffn_width, bool with_cross, Rng& rng) {
    TransformerBlockParams<S> b;
    b.self_attn = make_attention_params<S>(cfg, variant, rng);
    b.ln1 = make_layer_norm_params<S>(cfg.d_model);
    if (with_cross) {
        b.cross_attn = make_attention_params<S>(cfg, variant, rng);
        b.ln_cross = make_layer_norm_params<S>(cfg.d_model);
    }
    b.ffn = make_ffn_params<S>(cfg.d_model, ffn_width, rng);
    b.ln2 = make_layer_norm_params<S>(cfg.d_model);
    return b;
}

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

/// Additive logit mask: position (i, j) may attend iff entry is 0;
/// forbidden pairs hold a large negative constant.
template <typename S>
Tensor<S> make_causal_mask(size_t n) {
    Tensor<S> m = Tensor<S>::zeros({n, n});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) m.at(i, j) = static_cast<S>(kMaskedLogit);
    return m;
}

/// Blocks attention into padded key positions (key_valid[j] == 0).
template <typename S>
Tensor<S> make_padding_mask(size_t n_q, const std::vector<uint8_t>& key_valid) {
    Tensor<S> m = Tensor<S>::zeros({n_q, key_valid.size()});
    for (size_t i = 0; i < n_q; ++i)
        for (size_t j = 0; j < key_valid.size(); ++j)
            if (!key_valid[j]) m.at(i, j) = static_cast<S>(kMaskedLogit);
    return m;
}

template <typename S>
Tensor<S> combine_masks(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("combine_masks: " + format_shape(a.shape()) + " vs " +
                         format_shape(b.shape()));
    }
    Tensor<S> m = Tensor<S>::zeros(a.shape());
    for (size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = std::min(a.data()[i], b.data()[i]);  // either forbidden -> forbidden
    }
    return m;
}

// ---------------------------------------------------------------------------
// alpha / beta value snapshots
// ---------------------------------------------------------------------------

template <typename S>
constexpr double simplex_tolerance() {
    return std::is_same_v<S, double> ? 1e-9 : 1e-5;
}

/// Per-head re-weighting coefficients; a point on the M-simplex.
template <typename S>
struct AlphaWeights {
    std::vector<S> alpha;

    void validate(double tol) const {
        double sum = 0.0;
        for (S a : alpha) {
            if (!(a >= S(0))) throw ContractError("alpha weight negative or NaN");
            sum += static_cast<double>(a);
        }
        if (std::fabs(sum - 1.0) > tol) {
            throw ContractError("alpha weights sum to " + std::to_string(sum) +
                                ", expected 1 within " + std::to_string(tol));
        }
    }
    void validate() const { validate(simplex_tolerance<S>()); }
};

/// Per-channel gates; every entry strictly inside (0, 1).
template <typename S>
struct BetaWeights {
    std::vector<S> beta;

    void validate() const {
        for (S b : beta) {
            if (!(b > S(0) && b < S(1))) {
                throw ContractError("beta gate " + std::to_string(static_cast<double>(b)) +
                                    " outside (0,1)");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

template <typename S>
struct SdpaResult {
    Tensor<S> out;   // [N_q, d_v]
    Tensor<S> attn;  // [N_q, N_k] row-stochastic
};

/// softmax(Q K^T / sqrt(d_k)) V. `mask`, when given, is added to the logits
/// ([N_q, N_k], zeros where attention is allowed).
template <typename S>
SdpaResult<S> sdpa(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                   const Tensor<S>* mask = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw ShapeError("sdpa: expected rank-2 Q/K/V");
    }
    if (q.dim(1) != k.dim(1)) {
        throw ShapeError("sdpa: query width " + format_shape(q.shape()) + " vs key width " +
                         format_shape(k.shape()));
    }
    if (k.dim(0) != v.dim(0)) {
        throw ShapeError("sdpa: key count " + format_shape(k.shape()) + " vs value count " +
                         format_shape(v.shape()));
    }
    const S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    Tensor<S> logits = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    if (mask != nullptr) {
        if (mask->shape() != logits.shape()) {
            throw ShapeError("sdpa: mask shape " + format_shape(mask->shape()) +
                             " does not match logits " + format_shape(logits.shape()));
        }
        logits = add(logits, *mask);
    }
    Tensor<S> attn = softmax(logits, 1);
    return {matmul(attn, v), attn};
}

template <typename S>
struct MultiHeadResult {
    Tensor<S> y;                       // [N_q, D]: Concat(heads) * W^M
    std::vector<Tensor<S>> heads;      // each [N_q, d_v]
    std::vector<Tensor<S>> head_attn;  // each [N_q, N_k]
};

namespace detail {

template <typename S>
void run_heads(const Tensor<S>& x_q, const Tensor<S>& x_kv, const AttentionParams<S>& params,
               const Tensor<S>* mask, MultiHeadResult<S>& out) {
    if (params.heads.empty()) throw ConfigError("attention params: no heads");
    out.heads.reserve(params.heads.size());
    out.head_attn.reserve(params.heads.size());
    for (const auto& h : params.heads) {
        SdpaResult<S> r =
            sdpa(matmul(x_q, h.wq), matmul(x_kv, h.wk), matmul(x_kv, h.wv), mask);
        out.heads.push_back(std::move(r.out));
        out.head_attn.push_back(std::move(r.attn));
    }
}

}  // namespace detail

/// Standard multi-head attention; `x_kv` supplies keys/values (pass the
/// encoder output for cross-attention, or x itself for self-attention).
template <typename S>
MultiHeadResult<S> multi_head(const Tensor<S>& x_q, const Tensor<S>& x_kv,
                              const AttentionParams<S>& params, const Tensor<S>* mask = nullptr) {
    MultiHeadResult<S> out;
    detail::run_heads(x_q, x_kv, params, mask, out);
    out.y = matmul(concat(out.heads, 1), params.w_m);
    return out;
}

template <typename S>
MultiHeadResult<S> multi_head(const Tensor<S>& x, const AttentionParams<S>& params,
                              const Tensor<S>* mask = nullptr) {
    return multi_head(x, x, params, mask);
}

/// Differentiable alpha pipeline: per head, A_m = ReLU(H_m W^{A1} + X W^{A2}),
/// squashed to a scalar score by W^B/b^B and mean-pooled over tokens; scores
/// softmax to the head weights. Returns the [M] tensor inside the graph.
template <typename S>
Tensor<S> horizontal_alpha_tensor(const Tensor<S>& x_q, const std::vector<Tensor<S>>& heads,
                                  const HorizontalParams<S>& hp) {
    if (heads.empty()) throw ConfigError("horizontal_alpha: no heads");
    Tensor<S> x_proj = matmul(x_q, hp.w_a2);  // shared across heads
    std::vector<Tensor<S>> scores;
    scores.reserve(heads.size());
    for (const auto& h : heads) {
        Tensor<S> a = relu(add(matmul(h, hp.w_a1), x_proj));
        Tensor<S> b = add(matmul(a, hp.w_b), hp.b_b);  // [N,1]
        scores.push_back(mean(b, 0));                  // [1]
    }
    Tensor<S> alpha = softmax(concat(scores, 0), 0);
#if HVAT_DEBUG_CHECKS
    AlphaWeights<S>{alpha.value()}.validate();
#endif
    return alpha;
}

template <typename S>
AlphaWeights<S> horizontal_alpha(const Tensor<S>& x_q, const std::vector<Tensor<S>>& heads,
                                 const HorizontalParams<S>& hp) {
    return AlphaWeights<S>{horizontal_alpha_tensor(x_q, heads, hp).value()};
}

/// Concat(alpha_1 H_1, ..., alpha_M H_M) W^M. Exposed separately so tests can
/// drive it with an explicit alpha (e.g. an exact one-hot).
template <typename S>
Tensor<S> horizontal_combine(const std::vector<Tensor<S>>& heads, const Tensor<S>& alpha,
                             const Tensor<S>& w_m) {
    if (alpha.shape() != std::vector<size_t>{heads.size()}) {
        throw ShapeError("horizontal_combine: alpha shape " + format_shape(alpha.shape()) +
                         " for " + std::to_string(heads.size()) + " heads");
    }
    std::vector<Tensor<S>> weighted;
    weighted.reserve(heads.size());
    for (size_t m = 0; m < heads.size(); ++m) {
        weighted.push_back(mul(heads[m], slice(alpha, 0, m, 1)));
    }
    return matmul(concat(weighted, 1), w_m);
}

template <typename S>
struct HorizontalResult {
    Tensor<S> y;      // [N_q, D]
    Tensor<S> alpha;  // [M]
    MultiHeadResult<S> mh;  // y left empty; heads/attn populated
};

/// Head-re-weighted attention: heads as in multi_head, scaled by alpha before
/// the output projection.
template <typename S>
HorizontalResult<S> horizontal_attend(const Tensor<S>& x_q, const Tensor<S>& x_kv,
                                      const AttentionParams<S>& params,
                                      const Tensor<S>* mask = nullptr) {
    if (!params.horizontal) {
        throw ConfigError("horizontal_attend: attention params carry no horizontal set");
    }
    HorizontalResult<S> out;
    detail::run_heads(x_q, x_kv, params, mask, out.mh);
    out.alpha = horizontal_alpha_tensor(x_q, out.mh.heads, *params.horizontal);
    out.y = horizontal_combine(out.mh.heads, out.alpha, params.w_m);
    return out;
}

template <typename S>
HorizontalResult<S> horizontal_attend(const Tensor<S>& x, const AttentionParams<S>& params,
                                      const Tensor<S>* mask = nullptr) {
    return horizontal_attend(x, x, params, mask);
}

/// Differentiable beta pipeline: U = ReLU(X W^{U1} + Y W^{U2}), mean-pooled
/// over tokens, expanded to D channels through a sigmoid gate.
template <typename S>
Tensor<S> vertical_beta_tensor(const Tensor<S>& x, const Tensor<S>& y_m,
                               const VerticalParams<S>& vp) {
    if (x.shape() != y_m.shape()) {
        throw ShapeError("vertical_beta: X " + format_shape(x.shape()) + " vs Y " +
                         format_shape(y_m.shape()));
    }
    Tensor<S> u = relu(add(matmul(x, vp.w_u1), matmul(y_m, vp.w_u2)));  // [N, d_a]
    Tensor<S> pooled = reshape(mean(u, 0), {size_t(1), u.dim(1)});      // [1, d_a]
    Tensor<S> beta = sigmoid(add(reshape(matmul(pooled, vp.w_u), {vp.b_u.dim(0)}), vp.b_u));
#if HVAT_DEBUG_CHECKS
    BetaWeights<S>{beta.value()}.validate();
#endif
    return beta;  // [D]
}

template <typename S>
BetaWeights<S> vertical_beta(const Tensor<S>& x, const Tensor<S>& y_m,
                             const VerticalParams<S>& vp) {
    return BetaWeights<S>{vertical_beta_tensor(x, y_m, vp).value()};
}

template <typename S>
struct VerticalResult {
    Tensor<S> y;     // [N, D]
    Tensor<S> beta;  // [D]
};

/// Channel-re-calibrated attention output: Y^V = beta * Y, beta broadcast
/// over token rows.
template <typename S>
VerticalResult<S> vertical_attend(const Tensor<S>& x, const Tensor<S>& y_m,
                                  const AttentionParams<S>& params) {
    if (!params.vertical) {
        throw ConfigError("vertical_attend: attention params carry no vertical set");
    }
    VerticalResult<S> out;
    out.beta = vertical_beta_tensor(x, y_m, *params.vertical);
    out.y = mul(y_m, out.beta);
    return out;
}

// ---------------------------------------------------------------------------
// sublayers and the full block
// ---------------------------------------------------------------------------

/// What one attention sublayer produced, for tracing: alpha/beta are empty
/// tensors when the variant does not compute them.
template <typename S>
struct AttentionRecord {
    Tensor<S> alpha;
    Tensor<S> beta;
    std::vector<Tensor<S>> head_attn;
};

template <typename S>
struct SublayerResult {
    Tensor<S> y;
    AttentionRecord<S> record;
};

/// Variant-dispatched attention + residual + layer norm. For `both`, beta is
/// computed from (X, Y^H) and gates Y^H — the horizontal path runs strictly
/// before the vertical one.
template <typename S>
SublayerResult<S> attention_sublayer(const Tensor<S>& x_q, const Tensor<S>& x_kv,
                                     BlockVariant variant, const AttentionParams<S>& params,
                                     const LayerNormParams<S>& ln,
                                     const Tensor<S>* mask = nullptr) {
    SublayerResult<S> out;
    Tensor<S> inner;
    switch (variant) {
        case BlockVariant::baseline: {
            MultiHeadResult<S> mh = multi_head(x_q, x_kv, params, mask);
            out.record.head_attn = mh.head_attn;
            inner = mh.y;
            break;
        }
        case BlockVariant::horizontal: {
            HorizontalResult<S> h = horizontal_attend(x_q, x_kv, params, mask);
            out.record.head_attn = h.mh.head_attn;
            out.record.alpha = h.alpha;
            inner = h.y;
            break;
        }
        case BlockVariant::vertical: {
            MultiHeadResult<S> mh = multi_head(x_q, x_kv, params, mask);
            out.record.head_attn = mh.head_attn;
            VerticalResult<S> v = vertical_attend(x_q, mh.y, params);
            out.record.beta = v.beta;
            inner = v.y;
            break;
        }
        case BlockVariant::both: {
            HorizontalResult<S> h = horizontal_attend(x_q, x_kv, params, mask);
            out.record.head_attn = h.mh.head_attn;
            out.record.alpha = h.alpha;
            VerticalResult<S> v = vertical_attend(x_q, h.y, params);
            out.record.beta = v.beta;
            inner = v.y;
            break;
        }
    }
    out.y = layer_norm(add(inner, x_q), ln.gain, ln.bias, static_cast<S>(kLayerNormEps));
    return out;
}

/// Two linear maps with a ReLU between; no residual/norm (see ffn_sublayer).
template <typename S>
Tensor<S> ffn_core(const Tensor<S>& x, const FeedForwardParams<S>& p) {
    return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename S>
Tensor<S> ffn_sublayer(const Tensor<S>& x, const FeedForwardParams<S>& p,
                       const LayerNormParams<S>& ln) {
    return layer_norm(add(ffn_core(x, p), x), ln.gain, ln.bias, static_cast<S>(kLayerNormEps));
}

/// Standalone block (self-attention only): attention sublayer then the
/// feed-forward sublayer, each with residual + layer norm.
template <typename S>
Tensor<S> block_forward(const Tensor<S>& x, BlockVariant variant,
                        const TransformerBlockParams<S>& params,
                        const Tensor<S>* mask = nullptr,
                        AttentionRecord<S>* record = nullptr) {
    SublayerResult<S> a = attention_sublayer(x, x, variant, params.self_attn, params.ln1, mask);
    if (record != nullptr) *record = a.record;
    return ffn_sublayer(a.y, params.ffn, params.ln2);
}

}  // namespace hvat

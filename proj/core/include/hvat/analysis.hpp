#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hvat/flop_counter.hpp"
#include "hvat/model.hpp"

namespace hvat {

struct ParamDiscrepancy {
    std::string category;
    uint64_t enumerated = 0;
    uint64_t paper_prediction = 0;
};

/// Exact enumerated parameter counts next to the published closed forms.
/// Enumeration is ground truth; the published predictions are reported
/// verbatim and any mismatch is listed, never reconciled.
struct ParamReport {
    std::vector<std::pair<std::string, uint64_t>> category_counts;  // whole model, fixed order
    uint64_t total = 0;

    size_t attention_sublayers = 0;  // encoder self + decoder self + decoder cross
    uint64_t multihead_per_sublayer = 0;   // qkv projections + output projection
    uint64_t horizontal_per_sublayer = 0;  // 0 when the variant has no horizontal set
    uint64_t vertical_per_sublayer = 0;

    // closed forms from the enumerated shapes
    uint64_t horizontal_form = 0;  // d_v^2 + d*d_v + d_v + 1
    uint64_t vertical_form = 0;    // 3*d*d_a + d

    // published complexity-table predictions evaluated at this config
    uint64_t paper_multihead_form = 0;   // 2*M*D^2
    uint64_t paper_horizontal_form = 0;  // 2*D^2 + D
    uint64_t paper_vertical_form = 0;    // 3*D^2

    std::vector<ParamDiscrepancy> discrepancies;
};

/// Multiply-accumulate style operation counts for one attention block at
/// sequence length n, by region. Conventions (matching the runtime counter):
/// matmul 2pqr, elementwise 1/element, softmax 3/element, mean in+out,
/// layer_norm 7/element, data movement free.
struct FlopReport {
    size_t n = 0;
    uint64_t sdpa_total = 0;        // full multi-head attention, projections included
    uint64_t horizontal_extra = 0;  // alpha pipeline + per-head scaling
    uint64_t vertical_extra = 0;    // beta pipeline + channel gating
    uint64_t ffn = 0;               // position-wise feed-forward core
};

/// Closed-form FLOP counts, written independently of the instrumented
/// counter; tests require exact agreement between the two.
FlopReport estimate_flops(const AttentionConfig& cfg, size_t ffn_width, size_t n);

// closed forms used by ParamReport, exposed for tests
uint64_t horizontal_param_form(size_t d_model, size_t d_v);
uint64_t vertical_param_form(size_t d_model, size_t d_a);

template <typename S>
ParamReport count_params(Seq2SeqModel<S>& model) {
    static constexpr ParamCategory kOrder[] = {
        ParamCategory::embeddings,      ParamCategory::qkv_projections,
        ParamCategory::output_projection, ParamCategory::horizontal_extra,
        ParamCategory::vertical_extra,  ParamCategory::ffn,
        ParamCategory::layernorm,
    };
    uint64_t by_cat[7] = {};
    auto index_of = [&](ParamCategory c) {
        for (size_t i = 0; i < 7; ++i)
            if (kOrder[i] == c) return i;
        return size_t(0);
    };
    model.visit_params([&](const std::string&, ParamCategory c, Tensor<S>& t) {
        by_cat[index_of(c)] += t.size();
    });

    ParamReport r;
    for (size_t i = 0; i < 7; ++i) {
        r.category_counts.emplace_back(to_string(kOrder[i]), by_cat[i]);
        r.total += by_cat[i];
    }

    const ModelConfig& cfg = model.config;
    r.attention_sublayers = model.encoder.size() + 2 * model.decoder.size();
    if (r.attention_sublayers > 0) {
        const uint64_t qkv = by_cat[index_of(ParamCategory::qkv_projections)];
        const uint64_t proj = by_cat[index_of(ParamCategory::output_projection)];
        const uint64_t hor = by_cat[index_of(ParamCategory::horizontal_extra)];
        const uint64_t ver = by_cat[index_of(ParamCategory::vertical_extra)];
        r.multihead_per_sublayer = (qkv + proj) / r.attention_sublayers;
        r.horizontal_per_sublayer = hor / r.attention_sublayers;
        r.vertical_per_sublayer = ver / r.attention_sublayers;
    }

    r.horizontal_form = horizontal_param_form(cfg.d_model, cfg.d_v);
    r.vertical_form = vertical_param_form(cfg.d_model, cfg.attention_config().resolved_d_a());
    const uint64_t d = cfg.d_model;
    r.paper_multihead_form = 2 * cfg.n_heads * d * d;
    r.paper_horizontal_form = 2 * d * d + d;
    r.paper_vertical_form = 3 * d * d;

    if (r.multihead_per_sublayer != r.paper_multihead_form) {
        r.discrepancies.push_back(
            {"multi_head", r.multihead_per_sublayer, r.paper_multihead_form});
    }
    if (variant_has_horizontal(cfg.variant) &&
        r.horizontal_per_sublayer != r.paper_horizontal_form) {
        r.discrepancies.push_back(
            {"horizontal_extra", r.horizontal_per_sublayer, r.paper_horizontal_form});
    }
    if (variant_has_vertical(cfg.variant) && r.vertical_per_sublayer != r.paper_vertical_form) {
        r.discrepancies.push_back(
            {"vertical_extra", r.vertical_per_sublayer, r.paper_vertical_form});
    }
    return r;
}

/// Runs the real forward passes under the thread-local FLOP counter and
/// reports the same regions as estimate_flops. The horizontal region is
/// measured by differencing against plain multi-head attention, which shares
/// every other operation.
template <typename S = double>
FlopReport measure_flops(const AttentionConfig& cfg, size_t ffn_width, size_t n) {
    cfg.validate();
    Rng rng(123);
    AttentionParams<S> params = make_attention_params<S>(cfg, BlockVariant::both, rng);
    FeedForwardParams<S> ffn = make_ffn_params<S>(cfg.d_model, ffn_width, rng);
    Tensor<S> x = Tensor<S>::zeros({n, cfg.d_model});
    x.fill_uniform(rng, -1.0, 1.0);

    FlopReport r;
    r.n = n;
    FlopCounter mh_count, hor_count, ver_count, ffn_count;
    {
        FlopScope scope(mh_count);
        (void)multi_head(x, params);
    }
    {
        FlopScope scope(hor_count);
        (void)horizontal_attend(x, params);
    }
    Tensor<S> y_m = multi_head(x, params).y;  // built outside any scope
    {
        FlopScope scope(ver_count);
        (void)vertical_attend(x, y_m, params);
    }
    {
        FlopScope scope(ffn_count);
        (void)ffn_core(x, ffn);
    }
    r.sdpa_total = mh_count.total();
    r.horizontal_extra = hor_count.total() - mh_count.total();
    r.vertical_extra = ver_count.total();
    r.ffn = ffn_count.total();
    return r;
}

struct TraceRequest {
    bool alpha = false;
    bool beta = false;
    bool attn = false;
};

/// Forward pass with capture: per-sublayer alpha/beta/attention records.
/// Requesting a quantity the variant never computes is a configuration error.
template <typename S>
TraceSink<S> trace_attention(const Seq2SeqModel<S>& model, const std::vector<int32_t>& src,
                             const std::vector<int32_t>& tgt, const TraceRequest& req) {
    if (!req.alpha && !req.beta && !req.attn) {
        throw ConfigError("trace: nothing requested (enable alpha, beta, and/or attn)");
    }
    const BlockVariant v = model.config.variant;
    if (req.alpha && !variant_has_horizontal(v)) {
        throw ConfigError(std::string("trace: alpha requested but variant '") + to_string(v) +
                          "' computes no head re-weighting");
    }
    if (req.beta && !variant_has_vertical(v)) {
        throw ConfigError(std::string("trace: beta requested but variant '") + to_string(v) +
                          "' computes no channel gates");
    }
    TraceSink<S> sink;
    (void)forward(model, src, tgt, &sink);
    return sink;
}

}  // namespace hvat

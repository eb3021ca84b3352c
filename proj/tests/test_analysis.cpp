#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>

#include "hvat/analysis.hpp"
#include "hvat/model.hpp"

using namespace hvat;

namespace {

ModelConfig small_model(BlockVariant variant, size_t d, size_t m, size_t dk, size_t dv,
                        size_t da, size_t enc, size_t dec) {
    ModelConfig cfg;
    cfg.vocab_size = 7;
    cfg.d_model = d;
    cfg.n_heads = m;
    cfg.d_k = dk;
    cfg.d_v = dv;
    cfg.d_a = da;
    cfg.num_encoder_blocks = enc;
    cfg.num_decoder_blocks = dec;
    cfg.ffn_width = 2 * d;
    cfg.max_len = 6;
    cfg.variant = variant;
    cfg.seed = 21;
    return cfg;
}

}  // namespace

TEST_CASE("closed parameter forms match the enumeration across configurations") {
    struct Dims {
        size_t d, m, dk, dv, da, enc, dec;
    };
    const Dims cases[] = {
        {8, 2, 4, 4, 2, 1, 1},  {8, 2, 4, 4, 3, 2, 1},  {12, 3, 4, 4, 5, 1, 2},
        {16, 4, 4, 4, 4, 2, 2}, {16, 2, 8, 8, 7, 1, 1}, {16, 4, 2, 6, 4, 3, 1},
        {24, 4, 6, 6, 6, 1, 3}, {24, 3, 8, 4, 11, 2, 2}, {32, 8, 4, 4, 8, 1, 1},
        {32, 4, 8, 8, 16, 2, 3},
    };
    for (const Dims& c : cases) {
        CAPTURE(c.d);
        CAPTURE(c.m);
        CAPTURE(c.dv);
        CAPTURE(c.da);
        ModelConfig cfg =
            small_model(BlockVariant::both, c.d, c.m, c.dk, c.dv, c.da, c.enc, c.dec);
        Seq2SeqModel<float> model = build<float>(cfg);
        ParamReport r = count_params(model);

        CHECK(r.attention_sublayers == c.enc + 2 * c.dec);
        CHECK(r.horizontal_form == uint64_t(c.dv) * c.dv + uint64_t(c.d) * c.dv + c.dv + 1);
        CHECK(r.vertical_form == 3 * uint64_t(c.d) * c.da + c.d);
        CHECK(r.horizontal_per_sublayer == r.horizontal_form);
        CHECK(r.vertical_per_sublayer == r.vertical_form);
        CHECK(r.horizontal_per_sublayer == horizontal_param_form(c.d, c.dv));
        CHECK(r.vertical_per_sublayer == vertical_param_form(c.d, c.da));
        // per head: wq/wk [d, dk], wv [d, dv]; then w_m [m*dv, d]
        const uint64_t expect_mh =
            uint64_t(c.m) * (2 * uint64_t(c.d) * c.dk + uint64_t(c.d) * c.dv) +
            uint64_t(c.m) * c.dv * c.d;
        CHECK(r.multihead_per_sublayer == expect_mh);
    }
}

TEST_CASE("variant deltas are exactly the per-sublayer extras") {
    auto total_for = [](BlockVariant v) {
        ModelConfig cfg = small_model(v, 16, 4, 4, 4, 4, 2, 1);
        Seq2SeqModel<float> model = build<float>(cfg);
        return count_params(model);
    };
    ParamReport base = total_for(BlockVariant::baseline);
    ParamReport hor = total_for(BlockVariant::horizontal);
    ParamReport ver = total_for(BlockVariant::vertical);
    ParamReport both = total_for(BlockVariant::both);

    const uint64_t sublayers = base.attention_sublayers;
    REQUIRE(sublayers == 4);
    CHECK(base.horizontal_per_sublayer == 0);
    CHECK(base.vertical_per_sublayer == 0);
    CHECK(hor.total - base.total == hor.horizontal_per_sublayer * sublayers);
    CHECK(ver.total - base.total == ver.vertical_per_sublayer * sublayers);
    CHECK(both.total - base.total ==
          (both.horizontal_per_sublayer + both.vertical_per_sublayer) * sublayers);
}

TEST_CASE("category table covers the total in fixed order") {
    ModelConfig cfg = small_model(BlockVariant::both, 8, 2, 4, 4, 2, 1, 1);
    Seq2SeqModel<float> model = build<float>(cfg);
    ParamReport r = count_params(model);
    REQUIRE(r.category_counts.size() == 7);
    CHECK(r.category_counts[0].first == "embeddings");
    CHECK(r.category_counts[1].first == "qkv_projections");
    CHECK(r.category_counts[2].first == "output_projection");
    CHECK(r.category_counts[3].first == "horizontal_extra");
    CHECK(r.category_counts[4].first == "vertical_extra");
    CHECK(r.category_counts[5].first == "ffn");
    CHECK(r.category_counts[6].first == "layernorm");
    uint64_t sum = 0;
    for (const auto& [name, count] : r.category_counts) sum += count;
    CHECK(sum == r.total);

    uint64_t visited = 0;
    model.visit_params(
        [&](const std::string&, ParamCategory, Tensor<float>& t) { visited += t.size(); });
    CHECK(visited == r.total);
}

TEST_CASE("full-width heads expose the published off-by-one") {
    // d_v == d_model makes the enumerated head-weighting block exceed the
    // published closed form by exactly the scalar bias.
    ModelConfig cfg = small_model(BlockVariant::both, 512, 1, 512, 512, 0, 1, 0);
    Seq2SeqModel<float> model = build<float>(cfg);
    ParamReport r = count_params(model);

    CHECK(r.horizontal_per_sublayer == 524801);
    CHECK(r.paper_horizontal_form == 524800);
    bool listed = false;
    for (const ParamDiscrepancy& d : r.discrepancies) {
        if (d.category == "horizontal_extra") {
            listed = true;
            CHECK(d.enumerated == 524801);
            CHECK(d.paper_prediction == 524800);
        }
    }
    CHECK(listed);

    // default bottleneck (d_a = d_model/4) sits far below the published 3*D^2
    CHECK(r.vertical_per_sublayer == 3 * 512 * 128 + 512);
    CHECK(r.paper_vertical_form == 3 * 512 * 512);
    bool vertical_listed = false;
    for (const ParamDiscrepancy& d : r.discrepancies) {
        vertical_listed = vertical_listed || d.category == "vertical_extra";
    }
    CHECK(vertical_listed);
}

TEST_CASE("matching forms report no discrepancy entries for the aug blocks") {
    // horizontal matches 2D^2 + D only if dv^2 + d*dv + dv + 1 == 2d^2 + d,
    // which no integer dv satisfies at these sizes; so check the baseline
    // variant instead: no aug params, no aug discrepancies.
    ModelConfig cfg = small_model(BlockVariant::baseline, 16, 4, 4, 4, 4, 1, 1);
    Seq2SeqModel<float> model = build<float>(cfg);
    ParamReport r = count_params(model);
    for (const ParamDiscrepancy& d : r.discrepancies) {
        CHECK(d.category != "horizontal_extra");
        CHECK(d.category != "vertical_extra");
    }
}

TEST_CASE("flop estimates equal instrumented measurements exactly") {
    AttentionConfig narrow;
    narrow.d_model = 16;
    narrow.n_heads = 2;
    narrow.d_k = 8;
    narrow.d_v = 8;
    narrow.d_a = 4;

    AttentionConfig wide;
    wide.d_model = 32;
    wide.n_heads = 4;
    wide.d_k = 8;
    wide.d_v = 8;
    wide.d_a = 0;  // resolves to 8

    for (const AttentionConfig& cfg : {narrow, wide}) {
        for (size_t n : {4u, 8u, 16u}) {
            CAPTURE(cfg.d_model);
            CAPTURE(n);
            FlopReport est = estimate_flops(cfg, 4 * cfg.d_model, n);
            FlopReport meas = measure_flops<double>(cfg, 4 * cfg.d_model, n);
            CHECK(est.n == n);
            CHECK(meas.n == n);
            CHECK(est.sdpa_total == meas.sdpa_total);
            CHECK(est.horizontal_extra == meas.horizontal_extra);
            CHECK(est.vertical_extra == meas.vertical_extra);
            CHECK(est.ffn == meas.ffn);
            CHECK(est.sdpa_total > 0);
            CHECK(est.horizontal_extra > 0);
            CHECK(est.vertical_extra > 0);
            CHECK(est.ffn > 0);
        }
    }
}

TEST_CASE("attention cost grows quadratically while the extras stay linear") {
    AttentionConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_k = 8;
    cfg.d_v = 8;
    cfg.d_a = 4;
    FlopReport a = estimate_flops(cfg, 64, 4);
    FlopReport b = estimate_flops(cfg, 64, 8);
    FlopReport c = estimate_flops(cfg, 64, 16);
    // doubling n: projections double but the n^2 score/mix terms quadruple
    CHECK(c.sdpa_total > 2 * b.sdpa_total);
    CHECK(c.sdpa_total < 4 * b.sdpa_total);
    // the aug pipelines are affine in n (token-linear work plus a fixed
    // pooled tail), so consecutive doublings grow by exactly 2x in differences
    CHECK(c.horizontal_extra - b.horizontal_extra ==
          2 * (b.horizontal_extra - a.horizontal_extra));
    CHECK(c.vertical_extra - b.vertical_extra == 2 * (b.vertical_extra - a.vertical_extra));
    CHECK(c.horizontal_extra < 2 * b.horizontal_extra);
    CHECK(c.vertical_extra < 2 * b.vertical_extra);
    CHECK(c.ffn == 2 * b.ffn);  // ffn is exactly token-linear
}

TEST_CASE("trace rejects quantities the variant never computes") {
    ModelConfig cfg = small_model(BlockVariant::baseline, 8, 2, 4, 4, 2, 1, 1);
    Seq2SeqModel<double> model = build<double>(cfg);
    const std::vector<int32_t> src = {3, 4, 5};
    const std::vector<int32_t> tgt = {kBosId, 3, 4};

    TraceRequest nothing;
    CHECK_THROWS_AS((void)trace_attention(model, src, tgt, nothing), ConfigError);

    TraceRequest want_alpha;
    want_alpha.alpha = true;
    CHECK_THROWS_AS((void)trace_attention(model, src, tgt, want_alpha), ConfigError);

    TraceRequest want_attn;
    want_attn.attn = true;
    TraceSink<double> sink = trace_attention(model, src, tgt, want_attn);
    CHECK(sink.size() == 3);  // one encoder self + decoder self + decoder cross

    ModelConfig hcfg = small_model(BlockVariant::horizontal, 8, 2, 4, 4, 2, 1, 1);
    Seq2SeqModel<double> hmodel = build<double>(hcfg);
    TraceRequest want_beta;
    want_beta.beta = true;
    CHECK_THROWS_AS((void)trace_attention(hmodel, src, tgt, want_beta), ConfigError);
}

TEST_CASE("fresh models trace the exact degenerate weights") {
    ModelConfig cfg = small_model(BlockVariant::both, 16, 4, 4, 4, 4, 2, 1);
    Seq2SeqModel<double> model = build<double>(cfg);
    const std::vector<int32_t> src = {3, 5, 4, 6};
    const std::vector<int32_t> tgt = {kBosId, 3, 5};

    TraceRequest req;
    req.alpha = true;
    req.beta = true;
    req.attn = true;
    TraceSink<double> sink = trace_attention(model, src, tgt, req);
    REQUIRE(sink.size() == cfg.num_encoder_blocks + 2 * cfg.num_decoder_blocks);

    CHECK(sink[0].block == "encoder.0");
    CHECK(sink[0].sublayer == "self_attn");
    CHECK(sink[2].block == "decoder.0");
    CHECK(sink[2].sublayer == "self_attn");
    CHECK(sink[3].block == "decoder.0");
    CHECK(sink[3].sublayer == "cross_attn");

    for (const BlockTraceRecord<double>& rec : sink) {
        REQUIRE(rec.record.alpha.size() == cfg.n_heads);
        for (size_t m = 0; m < cfg.n_heads; ++m) {
            CHECK(rec.record.alpha(m) == 0.25);  // softmax of all-zero scores, M = 4
        }
        REQUIRE(rec.record.beta.size() == cfg.d_model);
        for (size_t j = 0; j < cfg.d_model; ++j) {
            CHECK(rec.record.beta(j) == 0.5);  // sigmoid at exactly zero
        }
        REQUIRE(rec.record.head_attn.size() == cfg.n_heads);
        for (const Tensor<double>& attn : rec.record.head_attn) {
            REQUIRE(attn.rank() == 2);
            for (size_t i = 0; i < attn.dim(0); ++i) {
                double row = 0;
                for (size_t j = 0; j < attn.dim(1); ++j) row += attn(i, j);
                CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

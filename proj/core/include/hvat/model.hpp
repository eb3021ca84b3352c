#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hvat/attention.hpp"
#include "hvat/tensor.hpp"

namespace hvat {

inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kBosId = 1;
inline constexpr int32_t kEosId = 2;
inline constexpr int32_t kFirstPayloadId = 3;

struct ModelConfig {
    size_t vocab_size = 0;
    size_t d_model = 512;
    size_t n_heads = 8;
    size_t d_k = 64;
    size_t d_v = 64;
    size_t d_a = 0;       // 0 -> max(1, d_model/4)
    size_t num_encoder_blocks = 6;
    size_t num_decoder_blocks = 6;
    size_t ffn_width = 0;  // 0 -> 4*d_model
    size_t max_len = 64;
    BlockVariant variant = BlockVariant::baseline;
    uint64_t seed = 0;

    size_t resolved_ffn_width() const { return ffn_width == 0 ? 4 * d_model : ffn_width; }

    AttentionConfig attention_config() const { return {d_model, n_heads, d_k, d_v, d_a}; }

    void validate() const {
        if (vocab_size < 2) {
            throw ConfigError("model config: vocab_size must be >= 2, got " +
                              std::to_string(vocab_size));
        }
        if (num_encoder_blocks + num_decoder_blocks < 1) {
            throw ConfigError("model config: need at least one block across encoder and decoder");
        }
        if (max_len < 1) throw ConfigError("model config: max_len must be >= 1");
        if (d_model % 2 != 0) {
            throw ConfigError("model config: d_model must be even for sinusoidal positions, got " +
                              std::to_string(d_model));
        }
        if (resolved_ffn_width() < 1) throw ConfigError("model config: ffn_width must be >= 1");
        attention_config().validate();
    }
};

/// Sinusoidal position table: row pos holds sin(pos/10000^(2i/D)) in even
/// columns and cos of the same angle in odd ones. Not trainable.
template <typename S>
Tensor<S> positional_encoding(size_t max_len, size_t d_model) {
    if (d_model % 2 != 0) {
        throw ConfigError("positional_encoding: width must be even, got " +
                          std::to_string(d_model));
    }
    if (max_len < 1) throw ConfigError("positional_encoding: max_len must be >= 1");
    Tensor<S> pe = Tensor<S>::zeros({max_len, d_model});
    for (size_t pos = 0; pos < max_len; ++pos) {
        for (size_t i = 0; 2 * i < d_model; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, (2.0 * static_cast<double>(i)) / static_cast<double>(d_model));
            pe.at(pos, 2 * i) = static_cast<S>(std::sin(angle));
            pe.at(pos, 2 * i + 1) = static_cast<S>(std::cos(angle));
        }
    }
    return pe;
}

enum class ParamCategory {
    embeddings,
    qkv_projections,
    output_projection,
    horizontal_extra,
    vertical_extra,
    ffn,
    layernorm,
};

inline const char* to_string(ParamCategory c) {
    switch (c) {
        case ParamCategory::embeddings: return "embeddings";
        case ParamCategory::qkv_projections: return "qkv_projections";
        case ParamCategory::output_projection: return "output_projection";
        case ParamCategory::horizontal_extra: return "horizontal_extra";
        case ParamCategory::vertical_extra: return "vertical_extra";
        case ParamCategory::ffn: return "ffn";
        case ParamCategory::layernorm: return "layernorm";
    }
    return "?";
}

template <typename S>
using ParamVisitor = std::function<void(const std::string& name, ParamCategory, Tensor<S>&)>;

namespace detail {

template <typename S>
void visit_attention_params(AttentionParams<S>& p, const std::string& prefix,
                            const ParamVisitor<S>& fn) {
    for (size_t m = 0; m < p.heads.size(); ++m) {
        const std::string hp = prefix + "head." + std::to_string(m) + ".";
        fn(hp + "wq", ParamCategory::qkv_projections, p.heads[m].wq);
        fn(hp + "wk", ParamCategory::qkv_projections, p.heads[m].wk);
        fn(hp + "wv", ParamCategory::qkv_projections, p.heads[m].wv);
    }
    fn(prefix + "w_m", ParamCategory::output_projection, p.w_m);
    if (p.horizontal) {
        fn(prefix + "horizontal.w_a1", ParamCategory::horizontal_extra, p.horizontal->w_a1);
        fn(prefix + "horizontal.w_a2", ParamCategory::horizontal_extra, p.horizontal->w_a2);
        fn(prefix + "horizontal.w_b", ParamCategory::horizontal_extra, p.horizontal->w_b);
        fn(prefix + "horizontal.b_b", ParamCategory::horizontal_extra, p.horizontal->b_b);
    }
    if (p.vertical) {
        fn(prefix + "vertical.w_u1", ParamCategory::vertical_extra, p.vertical->w_u1);
        fn(prefix + "vertical.w_u2", ParamCategory::vertical_extra, p.vertical->w_u2);
        fn(prefix + "vertical.w_u", ParamCategory::vertical_extra, p.vertical->w_u);
        fn(prefix + "vertical.b_u", ParamCategory::vertical_extra, p.vertical->b_u);
    }
}

template <typename S>
void visit_block_params(TransformerBlockParams<S>& b, const std::string& prefix,
                        const ParamVisitor<S>& fn) {
    visit_attention_params(b.self_attn, prefix + "self_attn.", fn);
    fn(prefix + "ln1.gain", ParamCategory::layernorm, b.ln1.gain);
    fn(prefix + "ln1.bias", ParamCategory::layernorm, b.ln1.bias);
    if (b.cross_attn) {
        visit_attention_params(*b.cross_attn, prefix + "cross_attn.", fn);
        fn(prefix + "ln_cross.gain", ParamCategory::layernorm, b.ln_cross->gain);
        fn(prefix + "ln_cross.bias", ParamCategory::layernorm, b.ln_cross->bias);
    }
    fn(prefix + "ffn.w1", ParamCategory::ffn, b.ffn.w1);
    fn(prefix + "ffn.b1", ParamCategory::ffn, b.ffn.b1);
    fn(prefix + "ffn.w2", ParamCategory::ffn, b.ffn.w2);
    fn(prefix + "ffn.b2", ParamCategory::ffn, b.ffn.b2);
    fn(prefix + "ln2.gain", ParamCategory::layernorm, b.ln2.gain);
    fn(prefix + "ln2.bias", ParamCategory::layernorm, b.ln2.bias);
}

}  // namespace detail

/// One attention sublayer's traced quantities, tagged with its place in the
/// stack (e.g. block "decoder.1", sublayer "cross_attn").
template <typename S>
struct BlockTraceRecord {
    std::string block;
    std::string sublayer;
    AttentionRecord<S> record;
};

template <typename S>
using TraceSink = std::vector<BlockTraceRecord<S>>;

template <typename S>
struct Seq2SeqModel {
    ModelConfig config;
    Tensor<S> embedding;     // [vocab, D]
    Tensor<S> pos_encoding;  // [max_len, D], fixed
    std::vector<TransformerBlockParams<S>> encoder;
    std::vector<TransformerBlockParams<S>> decoder;  // with cross-attention
    Tensor<S> vocab_head;    // [D, vocab]

    /// Stable, build-order enumeration of every trainable tensor. Checkpoints
    /// and parameter counting both key off these names.
    void visit_params(const ParamVisitor<S>& fn) {
        fn("embedding.table", ParamCategory::embeddings, embedding);
        for (size_t i = 0; i < encoder.size(); ++i) {
            detail::visit_block_params(encoder[i], "encoder." + std::to_string(i) + ".", fn);
        }
        for (size_t i = 0; i < decoder.size(); ++i) {
            detail::visit_block_params(decoder[i], "decoder." + std::to_string(i) + ".", fn);
        }
        fn("vocab_head.w", ParamCategory::embeddings, vocab_head);
    }

    std::vector<Tensor<S>> parameters() {
        std::vector<Tensor<S>> out;
        visit_params([&](const std::string&, ParamCategory, Tensor<S>& t) { out.push_back(t); });
        return out;
    }

    void zero_grads() {
        visit_params([](const std::string&, ParamCategory, Tensor<S>& t) { t.zero_grad(); });
    }
};

/// Deterministic seeded build. Draw order: embedding, encoder blocks in
/// order, decoder blocks in order, vocabulary head.
template <typename S>
Seq2SeqModel<S> build(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    Seq2SeqModel<S> model;
    model.config = config;
    const AttentionConfig acfg = config.attention_config();
    model.embedding = init_matrix<S>(config.vocab_size, config.d_model, rng);
    model.pos_encoding = positional_encoding<S>(config.max_len, config.d_model);
    model.encoder.reserve(config.num_encoder_blocks);
    for (size_t i = 0; i < config.num_encoder_blocks; ++i) {
        model.encoder.push_back(make_block_params<S>(acfg, config.variant,
                                                     config.resolved_ffn_width(), false, rng));
    }
    model.decoder.reserve(config.num_decoder_blocks);
    for (size_t i = 0; i < config.num_decoder_blocks; ++i) {
        model.decoder.push_back(make_block_params<S>(acfg, config.variant,
                                                     config.resolved_ffn_width(), true, rng));
    }
    model.vocab_head = init_matrix<S>(config.d_model, config.vocab_size, rng);
    return model;
}

namespace detail {

template <typename S>
void validate_token_sequence(const std::vector<int32_t>& tokens, size_t vocab, size_t max_len,
                             const char* which) {
    if (tokens.empty()) throw InputError(std::string(which) + " sequence is empty");
    if (tokens.size() > max_len) {
        throw InputError(std::string(which) + " sequence length " + std::to_string(tokens.size()) +
                         " exceeds max_len " + std::to_string(max_len));
    }
    for (int32_t t : tokens) {
        if (t < 0 || static_cast<size_t>(t) >= vocab) {
            throw InputError(std::string(which) + " token id " + std::to_string(t) +
                             " out of range [0," + std::to_string(vocab) + ")");
        }
    }
}

template <typename S>
Tensor<S> embed_sequence(const Seq2SeqModel<S>& model, const std::vector<int32_t>& tokens) {
    Tensor<S> emb = embedding_rows(model.embedding, tokens);
    Tensor<S> scaled = scale(emb, static_cast<S>(std::sqrt(static_cast<double>(model.config.d_model))));
    return add(scaled, slice(model.pos_encoding, 0, 0, tokens.size()));
}

inline std::vector<uint8_t> valid_flags(const std::vector<int32_t>& tokens) {
    std::vector<uint8_t> v(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) v[i] = tokens[i] != kPadId ? 1 : 0;
    return v;
}

inline bool any_pad(const std::vector<uint8_t>& flags) {
    for (uint8_t f : flags)
        if (!f) return true;
    return false;
}

}  // namespace detail

/// Teacher-forced forward: per-position vocabulary logits for the target
/// sequence given the source. Pad tokens (id 0) are masked out of attention
/// on both sides. `sink` collects per-sublayer alpha/beta/attention traces.
template <typename S>
Tensor<S> forward(const Seq2SeqModel<S>& model, const std::vector<int32_t>& src_tokens,
                  const std::vector<int32_t>& tgt_tokens, TraceSink<S>* sink = nullptr) {
    const ModelConfig& cfg = model.config;
    detail::validate_token_sequence<S>(src_tokens, cfg.vocab_size, cfg.max_len, "source");
    detail::validate_token_sequence<S>(tgt_tokens, cfg.vocab_size, cfg.max_len, "target");
    const size_t n_src = src_tokens.size();
    const size_t n_tgt = tgt_tokens.size();

    const std::vector<uint8_t> src_valid = detail::valid_flags(src_tokens);
    const std::vector<uint8_t> tgt_valid = detail::valid_flags(tgt_tokens);

    std::optional<Tensor<S>> enc_mask;
    if (detail::any_pad(src_valid)) enc_mask = make_padding_mask<S>(n_src, src_valid);

    auto record = [&](const char* block, const char* sub, const AttentionRecord<S>& r) {
        if (sink != nullptr) sink->push_back({block, sub, r});
    };

    Tensor<S> enc_x = detail::embed_sequence(model, src_tokens);
    for (size_t i = 0; i < model.encoder.size(); ++i) {
        const auto& blk = model.encoder[i];
        SublayerResult<S> a = attention_sublayer(enc_x, enc_x, cfg.variant, blk.self_attn,
                                                 blk.ln1, enc_mask ? &*enc_mask : nullptr);
        record(("encoder." + std::to_string(i)).c_str(), "self_attn", a.record);
        enc_x = ffn_sublayer(a.y, blk.ffn, blk.ln2);
    }

    Tensor<S> dec_mask = make_causal_mask<S>(n_tgt);
    if (detail::any_pad(tgt_valid)) {
        dec_mask = combine_masks(dec_mask, make_padding_mask<S>(n_tgt, tgt_valid));
    }
    std::optional<Tensor<S>> cross_mask;
    if (detail::any_pad(src_valid)) cross_mask = make_padding_mask<S>(n_tgt, src_valid);

    Tensor<S> dec_x = detail::embed_sequence(model, tgt_tokens);
    for (size_t i = 0; i < model.decoder.size(); ++i) {
        const auto& blk = model.decoder[i];
        if (!blk.cross_attn || !blk.ln_cross) {
            throw ContractError("decoder block " + std::to_string(i) + " lacks cross-attention");
        }
        const std::string name = "decoder." + std::to_string(i);
        SublayerResult<S> a =
            attention_sublayer(dec_x, dec_x, cfg.variant, blk.self_attn, blk.ln1, &dec_mask);
        record(name.c_str(), "self_attn", a.record);
        SublayerResult<S> c = attention_sublayer(a.y, enc_x, cfg.variant, *blk.cross_attn,
                                                 *blk.ln_cross, cross_mask ? &*cross_mask : nullptr);
        record(name.c_str(), "cross_attn", c.record);
        dec_x = ffn_sublayer(c.y, blk.ffn, blk.ln2);
    }

    return matmul(dec_x, model.vocab_head);
}

/// Index of the row maximum; ties go to the lowest index.
template <typename S>
size_t argmax_row(const Tensor<S>& t, size_t row) {
    const size_t cols = t.shape().back();
    const S* v = t.data() + row * cols;
    size_t best = 0;
    for (size_t j = 1; j < cols; ++j) {
        if (v[j] > v[best]) best = j;
    }
    return best;
}

/// Repeated argmax continuation from BOS; stops at EOS or after max_steps
/// tokens. The returned sequence excludes both BOS and the terminating EOS.
template <typename S>
std::vector<int32_t> greedy_decode(const Seq2SeqModel<S>& model,
                                   const std::vector<int32_t>& src_tokens, size_t max_steps,
                                   int32_t bos_id, int32_t eos_id) {
    std::vector<int32_t> generated;
    if (max_steps == 0) return generated;
    if (max_steps > model.config.max_len) {
        throw InputError("greedy_decode: max_steps " + std::to_string(max_steps) +
                         " exceeds max_len " + std::to_string(model.config.max_len));
    }
    std::vector<int32_t> tgt = {bos_id};
    for (size_t step = 0; step < max_steps; ++step) {
        Tensor<S> logits = forward(model, src_tokens, tgt);
        const int32_t next = static_cast<int32_t>(argmax_row(logits, tgt.size() - 1));
        if (next == eos_id) break;
        generated.push_back(next);
        if (tgt.size() == model.config.max_len) break;  // no room to condition on more
        tgt.push_back(next);
    }
    return generated;
}

}  // namespace hvat

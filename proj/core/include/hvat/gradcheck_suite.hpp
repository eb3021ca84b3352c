#pragma once

#include <string>
#include <vector>

#include "hvat/attention.hpp"
#include "hvat/gradcheck.hpp"

namespace hvat {

/// Gradient checks through entire blocks: every parameter of the block plus
/// the input, reduced to a scalar by a fixed random projection. One case per
/// requested variant. Dimensions are validated small — finite differencing a
/// block is O(params * forwards).
inline std::vector<GradCheckCase> block_gradcheck_cases(size_t n, size_t d, size_t m, size_t d_a,
                                                        const std::vector<BlockVariant>& variants) {
    if (n < 1 || n > 8) throw ConfigError("block gradcheck: N must lie in [1,8]");
    if (d < 2 || d > 16) throw ConfigError("block gradcheck: D must lie in [2,16]");
    if (m < 1 || d % m != 0) throw ConfigError("block gradcheck: M must divide D");
    if (d_a < 1 || d_a >= d) throw ConfigError("block gradcheck: need 1 <= Da < D");

    AttentionConfig cfg;
    cfg.d_model = d;
    cfg.n_heads = m;
    cfg.d_k = d / m;
    cfg.d_v = d / m;
    cfg.d_a = d_a;
    cfg.validate();

    std::vector<GradCheckCase> cases;
    for (BlockVariant variant : variants) {
        const std::string name = std::string("block_") + to_string(variant);
        cases.push_back({name, [cfg, d, n, variant](double h) {
            // Seeds frozen after verifying conditioning: every parameter
            // element's gradient must stand clear of central-difference
            // rounding noise (~|f|*eps/2h) or the relative error saturates
            // regardless of backward correctness.
            Rng rng(1000 + static_cast<uint64_t>(variant));
            TransformerBlockParams<double> block =
                make_block_params<double>(cfg, variant, 4 * d, false, rng);
            Tensor<double> x = Tensor<double>::zeros({n, d});
            x.fill_uniform(rng, -1.0, 1.0);

            // zero-initialized augmentation tails have vacuously correct
            // gradients at exactly zero in some directions; redraw them wide
            // so the alpha/beta paths carry gradients well above that noise
            std::vector<Tensor<double>> params{x};
            auto collect = [&params, &rng](Tensor<double>& t, bool nudge) {
                if (nudge) t.fill_uniform(rng, -1.5, 1.5);
                params.push_back(t);
            };
            for (auto& head : block.self_attn.heads) {
                collect(head.wq, false);
                collect(head.wk, false);
                collect(head.wv, false);
            }
            collect(block.self_attn.w_m, false);
            if (block.self_attn.horizontal) {
                collect(block.self_attn.horizontal->w_a1, false);
                collect(block.self_attn.horizontal->w_a2, false);
                collect(block.self_attn.horizontal->w_b, true);
                collect(block.self_attn.horizontal->b_b, true);
            }
            if (block.self_attn.vertical) {
                collect(block.self_attn.vertical->w_u1, false);
                collect(block.self_attn.vertical->w_u2, false);
                collect(block.self_attn.vertical->w_u, true);
                collect(block.self_attn.vertical->b_u, true);
            }
            collect(block.ln1.gain, false);
            collect(block.ln1.bias, false);
            collect(block.ffn.w1, false);
            collect(block.ffn.b1, false);
            collect(block.ffn.w2, false);
            collect(block.ffn.b2, false);
            collect(block.ln2.gain, false);
            collect(block.ln2.bias, false);

            const uint64_t wseed = 1800 + static_cast<uint64_t>(variant);
            return grad_check([&block, x, variant, wseed]() {
                Rng r(wseed);
                return weighted_sum(block_forward(x, variant, block), r);
            }, params, h);
        }});
    }
    return cases;
}

inline std::vector<BlockVariant> all_variants() {
    return {BlockVariant::baseline, BlockVariant::horizontal, BlockVariant::vertical,
            BlockVariant::both};
}

}  // namespace hvat

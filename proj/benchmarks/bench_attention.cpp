#include <benchmark/benchmark.h>

#include "hvat/attention.hpp"
#include "hvat/common.hpp"

using namespace hvat;

namespace {

// one attention block, toy scale: D=64, M=4, d_k=d_v=16
constexpr size_t kN = 32;
constexpr size_t kD = 64;
constexpr size_t kM = 4;

AttentionConfig bench_config() {
    AttentionConfig cfg;
    cfg.d_model = kD;
    cfg.n_heads = kM;
    cfg.d_k = kD / kM;
    cfg.d_v = kD / kM;
    cfg.d_a = 0;
    return cfg;
}

Tensor<float> bench_input(size_t n, size_t d, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> x = Tensor<float>::zeros({n, d});
    x.fill_uniform(rng, -1.0, 1.0);
    return x;
}

void bm_block_forward(benchmark::State& state) {
    const auto variant = static_cast<BlockVariant>(state.range(0));
    Rng rng(7);
    TransformerBlockParams<float> params =
        make_block_params<float>(bench_config(), variant, 4 * kD, /*with_cross=*/false, rng);
    Tensor<float> x = bench_input(kN, kD, 11);
    for (auto _ : state) {
        Tensor<float> y = block_forward(x, variant, params);
        benchmark::DoNotOptimize(y.data());
    }
}

void bm_sdpa(benchmark::State& state) {
    const size_t n = static_cast<size_t>(state.range(0));
    const size_t d_k = 16;
    Tensor<float> q = bench_input(n, d_k, 3);
    Tensor<float> k = bench_input(n, d_k, 5);
    Tensor<float> v = bench_input(n, d_k, 9);
    for (auto _ : state) {
        SdpaResult<float> r = sdpa(q, k, v);
        benchmark::DoNotOptimize(r.out.data());
    }
    state.SetComplexityN(static_cast<int64_t>(n));
}

}  // namespace

BENCHMARK(bm_block_forward)
    ->DenseRange(0, 3)
    ->ArgNames({"variant"})
    ->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_sdpa)->RangeMultiplier(2)->Range(16, 256)->Complexity(benchmark::oNSquared)
    ->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();

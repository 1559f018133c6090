#include <benchmark/benchmark.h>

#include <random>

#include "ait/data.hpp"
#include "ait/hopfield.hpp"
#include "ait/model.hpp"
#include "ait/ops.hpp"
#include "ait/vit.hpp"
#include "ait/workspace.hpp"

using namespace ait;

namespace {

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    Tensor a = Tensor::uniform({n, n}, rng, -1, 1), b = Tensor::uniform({n, n}, rng, -1, 1);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).ptr());
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_SelfAttention(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    auto p = AttentionParams::init(64, 4, rng);
    Tensor v = Tensor::uniform({batch, 16, 64}, rng, -1, 1);
    for (auto _ : state) benchmark::DoNotOptimize(self_attention(v, p).ptr());
}
BENCHMARK(BM_SelfAttention)->Arg(8)->Arg(64);

void BM_Bottleneck(benchmark::State& state) {
    const auto positions = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    auto p = WorkspaceLayerParams::init(64, 8, 4, 4, rng);
    auto mem = init_memory(MemoryInit::gaussian, 8, 8, 1);
    Tensor x = Tensor::uniform({positions, 64}, rng, -1, 1);
    for (auto _ : state) benchmark::DoNotOptimize(bottleneck_attention(mem, x, p).gamma_hat.ptr());
}
BENCHMARK(BM_Bottleneck)->Arg(256)->Arg(1024);

void BM_HopfieldRetrieve(benchmark::State& state) {
    const auto iters = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(4);
    auto bank = build_attractors(Tensor::randn({8, 8}, rng), Tensor::randn({8, 64}, rng, Scalar(0.2)), 1);
    Tensor xi = Tensor::randn({1024, 64}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(retrieve_batch(xi, bank, iters).ptr());
}
BENCHMARK(BM_HopfieldRetrieve)->Arg(1)->Arg(3);

void BM_TinyForward(benchmark::State& state) {
    ModelConfig m;
    m.layers = 2;
    m.embed_dim = 64;
    m.heads = 4;
    m.mlp_dim = 128;
    m.memory_slots = 8;
    m.slot_dim = 8;
    m.bottleneck_heads = 4;
    m.bottleneck_size = 4;
    AitModel model(m, {}, {}, ImageGeometry{32, 32, 1, 8}, 2, 1);
    auto set = gen_triangle(64, 32, 1);
    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < 64; ++i) idx[i] = i;
    Tensor images = set.images(idx);
    for (auto _ : state) {
        NoGradScope no_grad;
        benchmark::DoNotOptimize(model.forward(images).logits.ptr());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 64));
}
BENCHMARK(BM_TinyForward)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

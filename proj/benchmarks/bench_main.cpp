#include <benchmark/benchmark.h>

#include "mvil/accounting.hpp"
#include "mvil/config.hpp"
#include "mvil/layers.hpp"
#include "mvil/rng.hpp"
#include "mvil/tensor.hpp"
#include "mvil/train.hpp"

namespace {

using namespace mvil;

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const auto a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

FusionLayerConfig layer_config(LayerKind kind) {
    FusionLayerConfig c;
    c.kind = kind;
    c.d = 64;
    c.n = 48;
    c.h = 256;
    c.h_pos = 48;
    c.heads = 4;
    c.k = 16;
    return c;
}

// Forward plus backward through one fusion layer at d=64, n=48.
void BM_LayerForwardBackward(benchmark::State& state) {
    const auto kind = static_cast<LayerKind>(state.range(0));
    const auto c = layer_config(kind);
    Rng rng(2);
    const auto params = init_layer_params(c, rng);
    const auto x = random_tensor({c.n, c.d}, rng, true);
    for (auto _ : state) {
        backward(sum(layer_forward(c, params, x)));
        for (const auto& [name, t] : params.named()) Tensor(t).zero_grad();
    }
    state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_LayerForwardBackward)->DenseRange(0, 4);

void BM_TrainSteps(benchmark::State& state) {
    auto kv = KeyValueConfig::parse("alphabet_size = 4\ngrid_rows = 2\ngrid_cols = 2\nd = 32\nlayers = 2\n"
                                    "h = 64\nh_pos = 16\nattention_heads = 4\nk_tiny = 16\nbatch_size = 8\nsteps = 10\n");
    kv.set("fusion_kind", std::string(to_string(static_cast<LayerKind>(state.range(0)))));
    const auto run = run_config_from(kv);
    for (auto _ : state) benchmark::DoNotOptimize(train(run).metrics.back().total_loss);
    state.SetLabel(kv.get_string("fusion_kind", ""));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * run.steps));
}
BENCHMARK(BM_TrainSteps)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_CountReference(benchmark::State& state) {
    const auto setup = reference_setup(LayerKind::Transformer);
    for (auto _ : state) benchmark::DoNotOptimize(analyze(setup.model).fusion_flops());
}
BENCHMARK(BM_CountReference);

}  // namespace
BENCHMARK_MAIN();

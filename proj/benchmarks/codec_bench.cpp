#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "uveqfed/baselines.hpp"
#include "uveqfed/codec.hpp"
#include "uveqfed/datamodel.hpp"
#include "uveqfed/entropy.hpp"
#include "uveqfed/lattice.hpp"

namespace {

using namespace uveqfed;

std::vector<double> gaussianVector(std::size_t m, std::uint64_t seed) {
    const Eigen::MatrixXd g = genGaussianMatrix(m, 1, seed);
    return {g.data(), g.data() + m};
}

void BM_NearestPoint(benchmark::State& state) {
    const Lattice lat = state.range(0) == 1 ? Lattice::scalar(0.1) : Lattice::hexagonal(0.1);
    CounterRng rng{7};
    std::vector<double> xs(2 * 4096);
    for (double& x : xs) x = rng.uniform(-10.0, 10.0);
    std::int64_t l[2];
    std::size_t i = 0;
    for (auto _ : state) {
        lat.nearestCoords(&xs[i], l);
        benchmark::DoNotOptimize(l);
        i = (i + 2) % xs.size();
    }
}
BENCHMARK(BM_NearestPoint)->Arg(1)->Arg(2);

void BM_UVeQFedEncode(benchmark::State& state) {
    UVeQFedConfig cfg;
    cfg.lattice = state.range(0) == 1 ? Lattice::scalar() : Lattice::hexagonal();
    cfg.rate = static_cast<double>(state.range(1));
    const UVeQFedCodec codec{cfg};
    const auto h = gaussianVector(4096, 1);
    std::uint64_t round = 0;
    for (auto _ : state) benchmark::DoNotOptimize(codec.encode(h, 0, round++));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(h.size()));
}
BENCHMARK(BM_UVeQFedEncode)->ArgsProduct({{1, 2}, {2, 4, 6}})->Unit(benchmark::kMicrosecond);

void BM_UVeQFedDecode(benchmark::State& state) {
    UVeQFedConfig cfg;
    cfg.lattice = state.range(0) == 1 ? Lattice::scalar() : Lattice::hexagonal();
    const UVeQFedCodec codec{cfg};
    const auto h = gaussianVector(4096, 2);
    const EncodedUpdate enc = codec.encode(h, 0, 0);
    for (auto _ : state) benchmark::DoNotOptimize(codec.decode(enc, 0, 0));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(h.size()));
}
BENCHMARK(BM_UVeQFedDecode)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_QsgdEncode(benchmark::State& state) {
    const auto h = gaussianVector(4096, 3);
    std::uint64_t round = 0;
    for (auto _ : state) benchmark::DoNotOptimize(qsgdEncode(h, 16, 0, 0, round++));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(h.size()));
}
BENCHMARK(BM_QsgdEncode)->Unit(benchmark::kMicrosecond);

void BM_RotatedEncode(benchmark::State& state) {
    const auto h = gaussianVector(4096, 4);
    std::uint64_t round = 0;
    for (auto _ : state) benchmark::DoNotOptimize(rotatedEncode(h, 4.0, 0, 0, round++));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(h.size()));
}
BENCHMARK(BM_RotatedEncode)->Unit(benchmark::kMicrosecond);

void BM_EntropyRoundTrip(benchmark::State& state) {
    CounterRng rng{5};
    std::vector<std::int64_t> coords(8192);
    for (auto& c : coords) c = static_cast<std::int64_t>(rng.gaussian() * 6.0);
    const EntropyOptions opts{static_cast<std::size_t>(state.range(0)), EntropyMode::Adaptive};
    for (auto _ : state) {
        const BitString bits = encodeIndices(coords, opts);
        benchmark::DoNotOptimize(decodeIndices(bits, coords.size(), opts));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(coords.size()));
}
BENCHMARK(BM_EntropyRoundTrip)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

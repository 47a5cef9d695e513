// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/random.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace nerfdiff;

Image noise_image(int res, std::uint64_t seed) {
    SplitMix rng(seed);
    Image im(res, res, 3);
    for (double& v : im.pixels) v = rng.normal();
    return im;
}

void BM_DenoiserPredict(benchmark::State& state) {
    const auto res = static_cast<int>(state.range(0));
    const auto den = TinyDenoiser::make(DenoiserConfig{}, 1);
    const Image z = noise_image(res, 2), cond = noise_image(res, 3);
    for (auto _ : state) benchmark::DoNotOptimize(den.predict(z, 0.5, &cond).x0.pixels.data());
    state.SetItemsProcessed(state.iterations() * res * res);
}
BENCHMARK(BM_DenoiserPredict)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_OracleDdim(benchmark::State& state) {
    const auto modes = static_cast<int>(state.range(0));
    std::vector<Image> means;
    for (int m = 0; m < modes; ++m) means.push_back(noise_image(32, 10 + static_cast<std::uint64_t>(m)));
    const GaussianMixtureOracle oracle(std::vector<double>(means.size(), 1.0 / modes), means, 0.02);
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(ddim_sample(oracle, nullptr, 32, 32, 3, 64, ++seed).pixels.data());
}
BENCHMARK(BM_OracleDdim)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

} // namespace

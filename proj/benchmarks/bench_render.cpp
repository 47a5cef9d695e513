// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/field.hpp"
#include "nerfdiff/optimize.hpp"
#include "nerfdiff/random.hpp"
#include "nerfdiff/renderer.hpp"
#include "nerfdiff/scenes.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace nerfdiff;

Camera bench_camera(int res) {
    RigConfig rig;
    return make_rig(rig, 1, res, res)[0];
}

void BM_FieldForward(benchmark::State& state) {
    const Camera cam = bench_camera(64);
    const auto field = make_field<float>(FieldConfig{}, cam, 1);
    const auto n = static_cast<std::size_t>(state.range(0));
    SplitMix rng(2);
    std::vector<Vec3> points, dirs;
    for (std::size_t k = 0; k < n; ++k) {
        const Ray ray = generate_ray(cam, static_cast<int>(rng.uniform() * 64), static_cast<int>(rng.uniform() * 64));
        // Field inputs live in the reference camera frame.
        const Vec3 world = ray.at(ray.t_near + rng.uniform() * (ray.t_far - ray.t_near));
        points.push_back(cam.pose.inverse_apply(world));
        dirs.push_back(cam.pose.rotation.transpose() * ray.direction);
    }
    FieldBatch<float> batch;
    for (auto _ : state) {
        batch.forward(field, points, dirs);
        benchmark::DoNotOptimize(batch.density(0));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FieldForward)->Arg(1024)->Arg(16384);

void BM_RenderImage(benchmark::State& state) {
    const auto res = static_cast<int>(state.range(0));
    const Camera cam = bench_camera(res);
    const auto field = make_field<float>(FieldConfig{}, cam, 1);
    RenderConfig rc;
    rc.threads = 1;
    for (auto _ : state) benchmark::DoNotOptimize(render_image(field, cam, rc, 3).rgb.pixels.data());
    state.SetItemsProcessed(state.iterations() * res * res);
}
BENCHMARK(BM_RenderImage)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_FitStep(benchmark::State& state) {
    DatasetConfig dc;
    dc.views_per_scene = 8;
    dc.resolution = 64;
    dc.gt_samples = 64;
    const auto ds = build_datasets(dc)[0];
    std::vector<PosedImage> views;
    for (std::size_t k = 0; k < ds.cameras.size(); ++k) views.push_back({ds.cameras[k], ds.images[k]});
    auto field = make_field<float>(FieldConfig{}, ds.cameras[0], 1);
    FitConfig cfg;
    cfg.steps = 1;
    cfg.batch_rays = static_cast<int>(state.range(0));
    std::uint64_t step = 0;
    for (auto _ : state) {
        cfg.seed = ++step;
        benchmark::DoNotOptimize(fit_scene(field, std::span<const PosedImage>(views), cfg));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitStep)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

} // namespace

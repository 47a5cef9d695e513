// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/error.hpp"
#include "nerfdiff/random.hpp"
#include "nerfdiff/renderer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nerfdiff;

namespace {

Camera reference_camera() {
    Camera cam;
    cam.intrinsics = Intrinsics::from_fov(12, 12, 0.8);
    cam.pose = look_at(Vec3(0, -2, 0), Vec3::Zero(), Vec3::UnitZ());
    cam.t_near = 1.0;
    cam.t_far = 3.0;
    return cam;
}

Camera side_camera() {
    Camera cam = reference_camera();
    cam.intrinsics = Intrinsics::from_fov(8, 6, 0.7);
    cam.pose = look_at(Vec3(1.2, -1.6, 0.3), Vec3::Zero(), Vec3::UnitZ());
    return cam;
}

template <typename T>
FieldParams<T> small_field(std::uint64_t seed, double feature_std = 0.5) {
    FieldConfig cfg;
    cfg.resolution = 5;
    cfg.channels = 4;
    cfg.hidden = 8;
    cfg.init_feature_std = feature_std;
    return make_field<T>(cfg, reference_camera(), seed);
}

// Zero weights, so the field is a constant inside the frustum.
FieldParams<double> constant_field(double r, double g, double b, double raw_density) {
    auto f = small_field<double>(0);
    for (auto& layer : f.mlp.layers) {
        layer.weight.setZero();
        layer.bias.setZero();
    }
    f.mlp.layers.back().bias << r, g, b, raw_density;
    return f;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Naive compositing straight from the definition.
Vec3 naive_composite(const std::vector<double>& t, double t_far, const std::vector<double>& rgb,
                     const std::vector<double>& density, const Vec3& bg) {
    Vec3 out = Vec3::Zero();
    for (std::size_t i = 0; i < t.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < i; ++j) sum += density[j] * (t[j + 1] - t[j]);
        const double delta = (i + 1 < t.size() ? t[i + 1] : t_far) - t[i];
        const double w = std::exp(-sum) * (1.0 - std::exp(-density[i] * delta));
        out += w * Vec3(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) total += density[j] * ((j + 1 < t.size() ? t[j + 1] : t_far) - t[j]);
    return out + std::exp(-total) * bg;
}

} // namespace

TEST(Sampling, StratifiedOnePerStratum) {
    const auto t = sample_stratified(1.0, 3.0, 8, 5);
    ASSERT_EQ(t.size(), 8u);
    for (int k = 0; k < 8; ++k) {
        EXPECT_GE(t[k], 1.0 + 0.25 * k);
        EXPECT_LT(t[k], 1.0 + 0.25 * (k + 1));
    }
    EXPECT_EQ(t, sample_stratified(1.0, 3.0, 8, 5));
    EXPECT_NE(t, sample_stratified(1.0, 3.0, 8, 6));
    const auto mid = sample_stratified(0.0, 1.0, 4, 5, false);
    EXPECT_EQ(mid, (std::vector<double>{0.125, 0.375, 0.625, 0.875}));
    EXPECT_THROW(sample_stratified(1.0, 1.0, 4, 0), Error);
}

TEST(Sampling, ImportanceConcentratesOnHeavyBin) {
    const std::vector<double> t = {1.25, 1.75, 2.25, 2.75};
    const std::vector<double> w = {0.0, 0.0, 1.0, 0.0};
    const auto f = sample_importance(t, w, 1.0, 3.0, 64, 3);
    ASSERT_EQ(f.size(), 64u);
    int inside = 0;
    for (double v : f)
        if (v >= 2.0 && v <= 2.5) ++inside;
    // Bin masses 0.0025, 0.0025, 1.0025, 0.0025 of 1.01: at most one draw per light bin.
    EXPECT_GE(inside, 61);
    EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
}

TEST(Sampling, ImportanceCountsFollowBinMass) {
    const std::vector<double> t = {0.1, 0.3, 0.5, 0.7, 0.9};
    const std::vector<double> w = {0.1, 0.4, 0.2, 0.0, 0.3};
    const int n = 1000;
    const auto f = sample_importance(t, w, 0.0, 1.0, n, 9);
    const double floor = 0.01 * 1.0 / 5.0;
    const double edges[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    for (int b = 0; b < 5; ++b) {
        int count = 0;
        for (double v : f)
            if (v >= edges[b] && v < edges[b + 1]) ++count;
        const double expected = n * (w[b] + floor) / (1.0 + 5 * floor);
        EXPECT_NEAR(count, expected, 1.01);
    }
}

TEST(Sampling, ImportanceWithZeroWeightsIsUniform) {
    const std::vector<double> t = {1.5, 2.0, 2.5};
    const std::vector<double> w = {0.0, 0.0, 0.0};
    const auto f = sample_importance(t, w, 1.0, 3.0, 4, 1, false);
    EXPECT_NEAR(f[0], 1.25, 1e-12);
    EXPECT_NEAR(f[3], 2.75, 1e-12);
    EXPECT_THROW(sample_importance(t, std::vector<double>{1.0, -1.0, 0.0}, 1.0, 3.0, 4, 1), Error);
}

TEST(Composite, MatchesNaiveDefinition) {
    SplitMix rng(2);
    std::vector<double> t, rgb, density;
    double acc = 1.0;
    for (int i = 0; i < 9; ++i) {
        acc += 0.2 * rng.uniform();
        t.push_back(acc);
        density.push_back(3.0 * rng.uniform());
        for (int c = 0; c < 3; ++c) rgb.push_back(rng.uniform());
    }
    const Vec3 bg(0.2, 0.5, 0.9);
    const auto res = composite(t, 3.0, rgb, density, bg);
    EXPECT_LT((res.rgb - naive_composite(t, 3.0, rgb, density, bg)).norm(), 1e-14);
    double wsum = 0.0, depth = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        wsum += res.weights[i];
        depth += res.weights[i] * t[i];
    }
    EXPECT_NEAR(res.opacity, wsum, 1e-15);
    EXPECT_NEAR(res.depth, depth, 1e-14);
    EXPECT_LE(res.opacity, 1.0);
}

TEST(Composite, EmptySpaceShowsBackground) {
    const std::vector<double> t = {1.0, 2.0}, rgb = {1, 0, 0, 0, 1, 0}, density = {0.0, 0.0};
    const auto res = composite(t, 3.0, rgb, density, Vec3(0.3, 0.6, 0.9));
    EXPECT_LT((res.rgb - Vec3(0.3, 0.6, 0.9)).norm(), 1e-15);
    EXPECT_EQ(res.opacity, 0.0);
}

TEST(Composite, RejectsBadInput) {
    const std::vector<double> t = {1.0, 2.0}, rgb = {1, 0, 0, 0, 1, 0};
    EXPECT_THROW(composite(t, 3.0, rgb, std::vector<double>{-1.0, 0.0}), Error);
    EXPECT_THROW(composite(t, 3.0, rgb, std::vector<double>{NAN, 0.0}), Error);
    EXPECT_THROW(composite(std::vector<double>{2.0, 1.0}, 3.0, rgb, std::vector<double>{1.0, 1.0}), Error);
    EXPECT_THROW(composite(t, 3.0, std::vector<double>{1.0}, std::vector<double>{1.0, 1.0}), Error);
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
    SplitMix rng(3);
    std::vector<double> t, rgb, density;
    for (int i = 0; i < 6; ++i) {
        t.push_back(1.0 + 0.3 * i + 0.1 * rng.uniform());
        density.push_back(2.0 * rng.uniform());
        for (int c = 0; c < 3; ++c) rgb.push_back(rng.uniform());
    }
    const Vec3 bg(0.1, 0.4, 0.7), up(0.3, -1.1, 0.8);
    std::vector<double> d_rgb(rgb.size()), d_density(density.size());
    composite_backward(t, 3.0, rgb, density, bg, up, d_rgb, d_density);
    auto f = [&](const std::vector<double>& c, const std::vector<double>& d) {
        return up.dot(naive_composite(t, 3.0, c, d, bg));
    };
    const double h = 1e-6;
    for (std::size_t k = 0; k < rgb.size(); ++k) {
        auto a = rgb, b = rgb;
        a[k] += h;
        b[k] -= h;
        EXPECT_NEAR(d_rgb[k], (f(a, density) - f(b, density)) / (2 * h), 1e-8);
    }
    for (std::size_t k = 0; k < density.size(); ++k) {
        auto a = density, b = density;
        a[k] += h;
        b[k] -= h;
        EXPECT_NEAR(d_density[k], (f(rgb, a) - f(rgb, b)) / (2 * h), 1e-8);
    }
}

TEST(Render, ConstantFieldMatchesBeerLambert) {
    const auto f = constant_field(0.3, -0.2, 1.1, 0.4);
    const double sigma = std::log1p(std::exp(0.4));
    const Camera ref = reference_camera();
    RenderConfig cfg{16, 0};
    cfg.jitter = false;
    cfg.background = Vec3(0.1, 0.2, 0.3);
    const Ray ray = generate_ray(ref, 6, 6);
    const auto res = render_pixel(f, ray, cfg, 7);
    // Depth along an off-axis ray is t * cos(angle); every sample still lies inside.
    const double first = 1.0 + 2.0 / 32.0;
    const double opacity = 1.0 - std::exp(-sigma * (3.0 - first));
    EXPECT_NEAR(res.opacity, opacity, 1e-12);
    const Vec3 color(sigmoid(0.3), sigmoid(-0.2), sigmoid(1.1));
    EXPECT_LT((res.rgb - (opacity * color + (1 - opacity) * cfg.background)).norm(), 1e-12);
}

TEST(Render, RaysMissingTheFrustumShowBackground) {
    const auto f = small_field<double>(4);
    Ray ray;
    ray.origin = Vec3(5, 5, 5);
    ray.direction = Vec3(1, 0, 0);
    ray.t_near = 0.1;
    ray.t_far = 2.0;
    RenderConfig cfg{8, 8};
    cfg.background = Vec3(0.4, 0.5, 0.6);
    const auto res = render_pixel(f, ray, cfg, 1);
    EXPECT_LT((res.rgb - cfg.background).norm(), 1e-15);
    EXPECT_EQ(res.opacity, 0.0);
}

TEST(Render, IndependentOfChunkingAndThreads) {
    const auto f = small_field<float>(5);
    const auto rays = generate_rays(side_camera());
    const auto seeds = pixel_seeds(side_camera(), 11);
    RenderConfig a{8, 8};
    a.chunk_rays = 64;
    RenderConfig b = a;
    b.chunk_rays = 5;
    b.threads = 3;
    RayRenderOutput<float> oa, ob;
    render_rays(f, std::span<const Ray>(rays), seeds, a, oa);
    render_rays(f, std::span<const Ray>(rays), seeds, b, ob);
    EXPECT_EQ(oa.rgb, ob.rgb);
    EXPECT_EQ(oa.depth, ob.depth);
    const auto one = render_pixel(f, rays[13], a, seeds[13]);
    EXPECT_NEAR(one.rgb.y(), oa.rgb[3 * 13 + 1], 1e-6);
}

TEST(Render, ImageUsesPixelSeeds) {
    const auto f = small_field<double>(6);
    const Camera cam = side_camera();
    RenderConfig cfg{8, 8};
    const auto img = render_image(f, cam, cfg, 21);
    EXPECT_EQ(img.rgb.height, 6);
    EXPECT_EQ(img.rgb.width, 8);
    const auto px = render_pixel(f, generate_ray(cam, 3, 2), cfg, derive_seed(21, 2 * 8 + 3));
    EXPECT_NEAR(img.rgb.at(2, 3, 0), px.rgb.x(), 1e-14);
    EXPECT_NEAR(img.opacity.at(2, 3, 0), px.opacity, 1e-14);
}

TEST(Render, FineSamplesAreBounded) {
    const auto f = small_field<double>(7, 2.0);
    const Ray ray = generate_ray(reference_camera(), 5, 6);
    RenderConfig cfg{16, 16};
    const auto res = render_pixel(f, ray, cfg, 3);
    EXPECT_GE(res.opacity, 0.0);
    EXPECT_LE(res.opacity, 1.0);
    EXPECT_GE(res.depth, 0.0);
    EXPECT_LE(res.depth, 3.0 * res.opacity + 1e-12);
}

TEST(Render, FixedSamplesMatchComposite) {
    const auto f = small_field<double>(8);
    const Ray ray = generate_ray(side_camera(), 4, 3);
    const std::vector<double> t = {1.1, 1.5, 1.9, 2.4};
    const auto res = render_ray_fixed(f, ray, t, Vec3::Ones());
    std::vector<double> rgb, density;
    for (double ti : t) {
        const Vec3 p = f.reference.pose.inverse_apply(ray.at(ti));
        const auto s = field_eval(f, p, f.reference.pose.rotation.transpose() * ray.direction);
        rgb.insert(rgb.end(), s.rgb.begin(), s.rgb.end());
        density.push_back(s.density);
    }
    EXPECT_LT((res.rgb - naive_composite(t, ray.t_far, rgb, density, Vec3::Ones())).norm(), 1e-13);
}

TEST(Render, BackwardMatchesFiniteDifferences) {
    // Coarse samples only: positions depend on the seed alone, so the render
    // is a smooth function of the parameters.
    auto f = small_field<double>(9, 1.0);
    const Ray ray = generate_ray(side_camera(), 3, 2);
    RenderConfig cfg{12, 0};
    cfg.background = Vec3(0.2, 0.3, 0.4);
    const Vec3 up(0.5, -0.7, 1.3);
    auto grads = f.zeros_like();
    render_backward(f, ray, cfg, 4, up, grads);
    auto views = parameter_views(f);
    const auto gviews = parameter_views(std::as_const(grads));
    const double h = 1e-6;
    int checked = 0;
    for (std::size_t v = 0; v < views.size(); ++v)
        for (std::size_t k = 0; k < views[v].values.size(); ++k) {
            double& x = views[v].values[k];
            const double keep = x;
            x = keep + h;
            const double a = up.dot(render_pixel(f, ray, cfg, 4).rgb);
            x = keep - h;
            const double b = up.dot(render_pixel(f, ray, cfg, 4).rgb);
            x = keep;
            const double fd = (a - b) / (2 * h);
            EXPECT_NEAR(gviews[v].values[k], fd, 1e-6) << views[v].name << "[" << k << "]";
            if (fd != 0.0) ++checked;
        }
    EXPECT_GT(checked, 20);
}

TEST(Render, BatchedBackwardMatchesPerRaySum) {
    const auto f = small_field<double>(10);
    const auto rays = generate_rays(side_camera());
    const auto seeds = pixel_seeds(side_camera(), 2);
    RenderConfig cfg{8, 8};
    cfg.chunk_rays = 7;
    cfg.threads = 2;
    auto batched = f.zeros_like();
    RayRenderOutput<double> out;
    render_rays_backward<double>(
        f, std::span<const Ray>(rays), seeds, cfg,
        [](std::size_t first, std::span<const double> rgb, std::span<double> d) {
            for (std::size_t k = 0; k < rgb.size(); ++k) d[k] = 0.1 * static_cast<double>((first * 3 + k) % 5) - rgb[k];
        },
        batched, &out);
    auto summed = f.zeros_like();
    for (std::size_t r = 0; r < rays.size(); ++r) {
        Vec3 g;
        for (int c = 0; c < 3; ++c) g[c] = 0.1 * static_cast<double>((r * 3 + c) % 5) - out.rgb[3 * r + c];
        render_backward(f, rays[r], cfg, seeds[r], g, summed);
    }
    const auto a = parameter_views(std::as_const(batched));
    const auto b = parameter_views(std::as_const(summed));
    for (std::size_t v = 0; v < a.size(); ++v)
        for (std::size_t k = 0; k < a[v].values.size(); ++k) EXPECT_NEAR(a[v].values[k], b[v].values[k], 1e-10);
}

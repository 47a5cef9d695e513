// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/error.hpp"
#include "nerfdiff/image.hpp"
#include "nerfdiff/random.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace nerfdiff;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed, double scale = 1.0) {
    Image im(h, w, c);
    SplitMix rng(seed);
    for (double& v : im.pixels) v = scale * rng.normal();
    return im;
}

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.pixels[k] - b.pixels[k]));
    return m;
}

// Smooth colour images the tiny denoiser can learn.
std::vector<DenoiserSample> toy_dataset(int count, int size, std::uint64_t seed) {
    std::vector<DenoiserSample> out;
    SplitMix rng(seed);
    for (int i = 0; i < count; ++i) {
        const double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
        Image target(size, size, 3);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double shade = 0.7 + 0.3 * x / (size - 1.0);
                target.at(y, x, 0) = r * shade;
                target.at(y, x, 1) = g * shade;
                target.at(y, x, 2) = b * shade;
            }
        Image cond = target;
        for (double& v : cond.pixels) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
        out.push_back({cond, target});
    }
    return out;
}

} // namespace

TEST(Schedule, CosineValuesAndEndpoints) {
    NoiseSchedule s;
    EXPECT_EQ(s.alpha(0.0), 1.0);
    EXPECT_EQ(s.sigma(0.0), 0.0);
    EXPECT_EQ(s.alpha(1.0), 0.0);
    EXPECT_EQ(s.sigma(1.0), 1.0);
    for (double t : {0.1, 0.37, 0.5, 0.93}) {
        EXPECT_NEAR(s.alpha(t), std::cos(std::numbers::pi * t / 2), 1e-15);
        EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t), 1.0, 1e-15);
        EXPECT_NEAR(s.snr(t), 1.0 / std::pow(std::tan(std::numbers::pi * t / 2), 2), 1e-9);
    }
    EXPECT_NEAR(s.snr(0.5), 1.0, 1e-12);
    EXPECT_TRUE(std::isinf(s.snr(0.0)));
    EXPECT_THROW(s.alpha_sigma(1.5), Error);
    EXPECT_THROW(s.alpha_sigma(-0.1), Error);
}

TEST(Diffusion, AddNoiseAndPredictX0Invert) {
    NoiseSchedule s;
    const Image x0 = random_image(4, 5, 3, 1);
    const Image eps = random_image(4, 5, 3, 2);
    const double t = 0.4;
    const Image z = add_noise(x0, eps, s, t);
    EXPECT_NEAR(z.pixels[7], s.alpha(t) * x0.pixels[7] + s.sigma(t) * eps.pixels[7], 1e-15);
    EXPECT_LT(max_abs_diff(predict_x0(z, eps, s, t), x0), 1e-13);
    EXPECT_THROW(predict_x0(z, eps, s, 1.0), Error);
}

TEST(Diffusion, VelocityConversionsAgree) {
    NoiseSchedule s;
    const Image x0 = random_image(3, 3, 3, 3);
    const Image eps = random_image(3, 3, 3, 4);
    const double t = 0.63;
    const auto [a, sg] = s.alpha_sigma(t);
    const Image z = add_noise(x0, eps, s, t);
    Image v = x0;
    for (std::size_t k = 0; k < v.size(); ++k) v.pixels[k] = a * eps.pixels[k] - sg * x0.pixels[k];
    for (auto [kind, value] :
         {std::pair{PredictionKind::eps, eps}, std::pair{PredictionKind::v, v}, std::pair{PredictionKind::x0, x0}}) {
        const auto p = velocity_convert(kind, value, z, s, t);
        EXPECT_LT(max_abs_diff(p.eps, eps), 1e-12);
        EXPECT_LT(max_abs_diff(p.v, v), 1e-12);
        EXPECT_LT(max_abs_diff(p.x0, x0), 1e-12);
    }
    // From v at t = 1: x0 = -v and eps = Z.
    const Image z1 = random_image(3, 3, 3, 5);
    const auto p1 = velocity_convert(PredictionKind::v, v, z1, s, 1.0);
    EXPECT_LT(max_abs_diff(p1.eps, z1), 1e-15);
    EXPECT_THROW(velocity_convert(PredictionKind::eps, eps, z1, s, 1.0), Error);
    EXPECT_THROW(velocity_convert(PredictionKind::x0, x0, z, s, 0.0), Error);
}

TEST(Diffusion, DdimStepMatchesFormula) {
    NoiseSchedule s;
    const Image z = random_image(2, 3, 3, 6);
    const Image eps = random_image(2, 3, 3, 7);
    const double t = 0.8, tn = 0.55;
    const Image out = ddim_step(z, eps, s, t, tn);
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double x0 =
            (z.pixels[k] - std::sin(std::numbers::pi * t / 2) * eps.pixels[k]) / std::cos(std::numbers::pi * t / 2);
        const double want =
            std::cos(std::numbers::pi * tn / 2) * x0 + std::sin(std::numbers::pi * tn / 2) * eps.pixels[k];
        EXPECT_NEAR(out.pixels[k], want, 1e-12);
    }
    EXPECT_LT(max_abs_diff(ddim_step(z, eps, s, t, t), z), 1e-12);
    EXPECT_LT(max_abs_diff(ddim_step_from(z, eps, s, 0.0), z), 0.0 + 1e-300);
    EXPECT_THROW(ddim_step(z, eps, s, 0.3, 0.5), Error);
}

TEST(Diffusion, GridIsUniformAndExact) {
    const auto g = ddim_grid(4);
    ASSERT_EQ(g.size(), 5u);
    EXPECT_EQ(g.front(), 1.0);
    EXPECT_EQ(g[2], 0.5);
    EXPECT_EQ(g.back(), 0.0);
    EXPECT_THROW(ddim_grid(0), Error);
}

TEST(Diffusion, StandardNormalStatistics) {
    const Image n = standard_normal(64, 64, 3, 42);
    double mean = 0.0, sq = 0.0;
    for (double v : n.pixels) {
        mean += v;
        sq += v * v;
    }
    mean /= n.size();
    sq /= n.size();
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(sq, 1.0, 0.05);
    EXPECT_EQ(standard_normal(4, 4, 3, 42).pixels, standard_normal(4, 4, 3, 42).pixels);
}

TEST(GaussianMixture, SingleComponentClosedForm) {
    NoiseSchedule sch;
    const Image mu = random_image(2, 2, 3, 8, 0.3);
    const double s = 0.2;
    GaussianMixtureOracle oracle({1.0}, {mu}, s);
    const Image z = random_image(2, 2, 3, 9);
    for (double t : {0.05, 0.5, 0.9, 1.0}) {
        const auto [a, sg] = sch.alpha_sigma(t);
        const double var = a * a * s * s + sg * sg;
        const auto p = oracle.predict(z, t, nullptr);
        for (std::size_t k = 0; k < z.size(); ++k) {
            EXPECT_NEAR(p.eps.pixels[k], sg * (z.pixels[k] - a * mu.pixels[k]) / var, 1e-12);
            // Posterior mean of x0 for a Gaussian prior.
            const double post = mu.pixels[k] + a * s * s * (z.pixels[k] - a * mu.pixels[k]) / var;
            EXPECT_NEAR(p.x0.pixels[k], post, 1e-12);
        }
    }
}

TEST(GaussianMixture, EpsIsScaledNegativeScore) {
    const Image m0 = random_image(2, 2, 3, 10, 0.5);
    const Image m1 = random_image(2, 2, 3, 11, 0.5);
    GaussianMixtureOracle oracle({0.3, 0.7}, {m0, m1}, 0.1);
    NoiseSchedule sch;
    const Image z = random_image(2, 2, 3, 12, 0.5);
    const double t = 0.35;
    const Image eps = gm_oracle_eps(oracle, z, t);
    const double h = 1e-6;
    for (std::size_t k = 0; k < z.size(); ++k) {
        Image up = z, down = z;
        up.pixels[k] += h;
        down.pixels[k] -= h;
        const double grad = (oracle.log_density(up, t) - oracle.log_density(down, t)) / (2 * h);
        EXPECT_NEAR(eps.pixels[k], -sch.sigma(t) * grad, 1e-5);
    }
    const auto r = oracle.responsibilities(z, t);
    EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
}

TEST(GaussianMixture, LogDensityNormalizes1D) {
    // 1x1x1 image: integrate the density numerically.
    Image m0(1, 1, 1, -0.5), m1(1, 1, 1, 0.6);
    GaussianMixtureOracle oracle({0.4, 0.6}, {m0, m1}, 0.15);
    double total = 0.0;
    const double dz = 1e-3;
    for (double z = -6.0; z <= 6.0; z += dz) {
        Image im(1, 1, 1, z);
        total += std::exp(oracle.log_density(im, 0.4)) * dz;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(GaussianMixture, DdimSamplingLandsOnModes) {
    Image m0(2, 2, 3, 0.2), m1(2, 2, 3, 0.8);
    GaussianMixtureOracle oracle({0.5, 0.5}, {m0, m1}, 0.02);
    int near = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Image x = ddim_sample(oracle, nullptr, 2, 2, 3, 64, seed);
        if (std::min(max_abs_diff(x, m0), max_abs_diff(x, m1)) < 0.1) ++near;
    }
    EXPECT_EQ(near, 20);
}

TEST(GaussianMixture, LoadsFromJson) {
    const auto dir = std::filesystem::temp_directory_path() / "nerfdiff_test_gm";
    std::filesystem::create_directories(dir);
    write_float_image(dir / "m0.f32", Image(2, 2, 3, 0.25));
    std::ofstream(dir / "gm.json") << R"({"s": 0.05, "components": [{"weight": 1.0, "mean": "m0.f32"}]})";
    const auto oracle = load_gaussian_mixture(dir / "gm.json");
    EXPECT_EQ(oracle.s(), 0.05);
    ASSERT_EQ(oracle.means().size(), 1u);
    EXPECT_EQ(oracle.means()[0].pixels[3], 0.25);
}

TEST(TinyDenoiser, InputLayoutAndShapes) {
    DenoiserConfig cfg;
    cfg.window = 3;
    cfg.time_freqs = 2;
    EXPECT_EQ(cfg.input_dim(), 27 * 3 * 2 + 4);
    cfg.conditional = false;
    EXPECT_EQ(cfg.input_dim(), 27 * 3 + 4);
    cfg.conditional = true;
    const auto den = TinyDenoiser::make(cfg, 1);
    const Image z = random_image(4, 5, 3, 13);
    const Image cond = random_image(4, 5, 3, 14);
    Matrix<double> in;
    den.build_input(z, 0.5, &cond, in);
    EXPECT_EQ(in.rows(), cfg.input_dim());
    EXPECT_EQ(in.cols(), 20);
    const Image v = den.predict_v(z, 0.5, &cond);
    EXPECT_TRUE(v.same_shape(z));
    EXPECT_THROW(den.predict_v(z, 0.5, nullptr), Error);
}

TEST(TinyDenoiser, PredictIsConsistentWithVelocity) {
    DenoiserConfig cfg;
    cfg.hidden = 16;
    const auto den = TinyDenoiser::make(cfg, 2);
    const Image z = random_image(3, 3, 3, 15);
    const Image cond = random_image(3, 3, 3, 16);
    NoiseSchedule s;
    for (double t : {0.2, 1.0}) {
        const Image v = den.predict_v(z, t, &cond);
        const auto p = den.predict(z, t, &cond);
        const auto [a, sg] = s.alpha_sigma(t);
        for (std::size_t k = 0; k < z.size(); ++k) {
            EXPECT_NEAR(p.x0.pixels[k], a * z.pixels[k] - sg * v.pixels[k], 1e-12);
            EXPECT_NEAR(p.eps.pixels[k], sg * z.pixels[k] + a * v.pixels[k], 1e-12);
        }
    }
}

TEST(TinyDenoiser, LossGradientsMatchFiniteDifferences) {
    DenoiserConfig cfg;
    cfg.hidden = 8;
    cfg.hidden_layers = 1;
    cfg.time_freqs = 2;
    auto den = TinyDenoiser::make(cfg, 3);
    const auto data = toy_dataset(1, 4, 17);
    const NoiseDraw draw = draw_noise(data[0].target, 5);

    Matrix<double> input, d_out, d_input;
    MlpCache<double> cache;
    denoiser_loss(den, data[0], draw, &input, &cache, &d_out);
    auto grads = den.mlp().zeros_like();
    mlp_backward(den.mlp(), cache, d_out, grads, &d_input);
    Image d_cond(4, 4, 3);
    den.cond_gradient(d_input, draw.t, d_cond);

    const double h = 1e-6;
    auto& bias = den.mlp().layers.back().bias;
    for (Eigen::Index k = 0; k < bias.size(); ++k) {
        const double keep = bias[k];
        bias[k] = keep + h;
        const double up = denoiser_loss(den, data[0], draw);
        bias[k] = keep - h;
        const double down = denoiser_loss(den, data[0], draw);
        bias[k] = keep;
        EXPECT_NEAR(grads.layers.back().bias[k], (up - down) / (2 * h), 1e-6);
    }
    for (std::size_t k = 0; k < d_cond.size(); k += 5) {
        DenoiserSample probe = data[0];
        probe.cond.pixels[k] += h;
        const double up = denoiser_loss(den, probe, draw);
        probe.cond.pixels[k] -= 2 * h;
        const double down = denoiser_loss(den, probe, draw);
        EXPECT_NEAR(d_cond.pixels[k], (up - down) / (2 * h), 1e-6);
    }
}

TEST(TinyDenoiser, ZeroPredictorBaselineMatchesDirectComputation) {
    const auto data = toy_dataset(2, 4, 18);
    NoiseSchedule s;
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (int d = 0; d < 3; ++d) {
            const auto draw = draw_noise(data[i].target, derive_seed(9, i, d));
            const auto [a, sg] = s.alpha_sigma(draw.t);
            double sum = 0.0;
            for (std::size_t k = 0; k < draw.eps.size(); ++k)
                sum += std::pow(a * draw.eps.pixels[k] - sg * data[i].target.pixels[k], 2);
            total += sum / draw.eps.size();
        }
    EXPECT_NEAR(zero_predictor_loss(data, 3, 9), total / 6.0, 1e-12);
}

TEST(TinyDenoiser, TrainingBeatsZeroPredictor) {
    DenoiserConfig cfg;
    cfg.hidden = 32;
    auto den = TinyDenoiser::make(cfg, 4);
    const auto train = toy_dataset(16, 6, 19);
    const auto held_out = toy_dataset(8, 6, 20);
    DenoiserTrainConfig tc;
    tc.steps = 300;
    tc.batch = 4;
    tc.lr = 3e-3;
    tc.seed = 1;
    const auto res = denoiser_train(den, train, tc);
    ASSERT_EQ(res.loss.size(), 300u);
    const double trained = denoiser_eval_loss(den, held_out, 4, 77);
    const double baseline = zero_predictor_loss(held_out, 4, 77);
    EXPECT_LT(trained, 0.5 * baseline);
    EXPECT_THROW(denoiser_train(den, {}, tc), Error);
}

TEST(TinyDenoiser, SaveLoadRoundTrip) {
    DenoiserConfig cfg;
    cfg.hidden = 12;
    cfg.window = 1;
    cfg.conditional = false;
    const auto den = TinyDenoiser::make(cfg, 5);
    const auto path = std::filesystem::temp_directory_path() / "nerfdiff_test_denoiser.bin";
    save_denoiser(path, den);
    const auto back = load_denoiser(path);
    EXPECT_EQ(back.config().window, 1);
    EXPECT_FALSE(back.config().conditional);
    const Image z = random_image(3, 3, 3, 21);
    // Weights are stored as float32.
    EXPECT_LT(max_abs_diff(back.predict_v(z, 0.3, nullptr), den.predict_v(z, 0.3, nullptr)), 1e-5);
}

// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/diffusion.hpp"

#include "nerfdiff/adam.hpp"
#include "nerfdiff/error.hpp"
#include "nerfdiff/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

namespace nerfdiff {

namespace {

// a * x + b * y
Image lincomb(double a, const Image& x, double b, const Image& y, const char* context) {
    require_same_shape(x, y, context);
    Image out(x.height, x.width, x.channels);
    for (std::size_t k = 0; k < x.size(); ++k) out.pixels[k] = a * x.pixels[k] + b * y.pixels[k];
    return out;
}

} // namespace

std::pair<double, double> NoiseSchedule::alpha_sigma(double t) const {
    NERFDIFF_CHECK(t >= 0.0 && t <= 1.0, "noise schedule: t must lie in [0, 1]");
    if (t == 0.0) return {1.0, 0.0};
    if (t == 1.0) return {0.0, 1.0};
    const double angle = 0.5 * std::numbers::pi * t;
    return {std::cos(angle), std::sin(angle)};
}

double NoiseSchedule::snr(double t) const {
    const auto [a, s] = alpha_sigma(t);
    return s == 0.0 ? std::numeric_limits<double>::infinity() : (a * a) / (s * s);
}

Image add_noise(const Image& x0, const Image& eps, const NoiseSchedule& sched, double t) {
    const auto [a, s] = sched.alpha_sigma(t);
    return lincomb(a, x0, s, eps, "add_noise");
}

Image standard_normal(int height, int width, int channels, std::uint64_t seed) {
    Image out(height, width, channels);
    SplitMix rng(seed);
    for (double& v : out.pixels) v = rng.normal();
    return out;
}

Prediction velocity_convert(PredictionKind kind, const Image& value, const Image& z, const NoiseSchedule& sched,
                            double t) {
    const auto [a, s] = sched.alpha_sigma(t);
    Prediction p;
    switch (kind) {
    case PredictionKind::v:
        p.v = value;
        p.eps = lincomb(a, value, s, z, "velocity_convert");
        p.x0 = lincomb(a, z, -s, value, "velocity_convert");
        break;
    case PredictionKind::eps:
        NERFDIFF_CHECK(a > 0.0, "velocity_convert: x0 is undefined from eps at alpha = 0");
        p.eps = value;
        p.x0 = lincomb(1.0 / a, z, -s / a, value, "velocity_convert");
        p.v = lincomb(a, value, -s, p.x0, "velocity_convert");
        break;
    case PredictionKind::x0:
        NERFDIFF_CHECK(s > 0.0, "velocity_convert: eps is undefined from x0 at sigma = 0");
        p.x0 = value;
        p.eps = lincomb(1.0 / s, z, -a / s, value, "velocity_convert");
        p.v = lincomb(a, p.eps, -s, value, "velocity_convert");
        break;
    }
    return p;
}

Image predict_x0(const Image& z, const Image& eps_hat, const NoiseSchedule& sched, double t) {
    const auto [a, s] = sched.alpha_sigma(t);
    NERFDIFF_CHECK(a > 0.0, "predict_x0: alpha_t = 0 at t = 1");
    return lincomb(1.0 / a, z, -s / a, eps_hat, "predict_x0");
}

Image ddim_step(const Image& z, const Image& eps_hat, const NoiseSchedule& sched, double t, double t_next) {
    NERFDIFF_CHECK(t_next >= 0.0 && t_next <= t && t <= 1.0, "ddim_step: requires 0 <= t_next <= t <= 1");
    if (t_next == t) return z;
    return ddim_step_from(predict_x0(z, eps_hat, sched, t), eps_hat, sched, t_next);
}

Image ddim_step_from(const Image& x0_hat, const Image& eps_hat, const NoiseSchedule& sched, double t_next) {
    const auto [a, s] = sched.alpha_sigma(t_next);
    return lincomb(a, x0_hat, s, eps_hat, "ddim_step");
}

std::vector<double> ddim_grid(int steps) {
    NERFDIFF_CHECK(steps >= 1, "ddim_grid: need at least one step");
    std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) grid[static_cast<std::size_t>(k)] = 1.0 - static_cast<double>(k) / steps;
    grid.back() = 0.0;
    return grid;
}

Image ddim_sample(const ScoreModel& model, const Image* cond, int height, int width, int channels, int steps,
                  std::uint64_t seed, const NoiseSchedule& sched) {
    const auto grid = ddim_grid(steps);
    Image z = standard_normal(height, width, channels, seed);
    for (int k = 0; k < steps; ++k) {
        const auto pred = model.predict(z, grid[static_cast<std::size_t>(k)], cond);
        z = ddim_step_from(pred.x0, pred.eps, sched, grid[static_cast<std::size_t>(k) + 1]);
    }
    return z;
}

GaussianMixtureOracle::GaussianMixtureOracle(std::vector<double> weights, std::vector<Image> means, double s,
                                             NoiseSchedule sched)
    : weights_(std::move(weights)), means_(std::move(means)), s_(s), sched_(sched) {
    NERFDIFF_CHECK(!means_.empty() && weights_.size() == means_.size(),
                   "mixture oracle: need one weight per component");
    NERFDIFF_CHECK(s_ >= 0.0, "mixture oracle: s must be non-negative");
    double total = 0.0;
    for (double w : weights_) {
        NERFDIFF_CHECK(w > 0.0, "mixture oracle: weights must be positive");
        total += w;
    }
    for (double& w : weights_) w /= total;
    for (const auto& m : means_) require_same_shape(m, means_.front(), "mixture oracle means");
}

std::vector<double> GaussianMixtureOracle::responsibilities(const Image& z, double t) const {
    const auto [a, s] = sched_.alpha_sigma(t);
    const double var = a * a * s_ * s_ + s * s;
    NERFDIFF_CHECK(var > 0.0, "mixture oracle: degenerate at t = 0 with s = 0");
    std::vector<double> logits(means_.size());
    for (std::size_t i = 0; i < means_.size(); ++i) {
        require_same_shape(z, means_[i], "mixture oracle");
        double d = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double diff = z.pixels[k] - a * means_[i].pixels[k];
            d += diff * diff;
        }
        logits[i] = std::log(weights_[i]) - 0.5 * d / var;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& l : logits) {
        l = std::exp(l - top);
        total += l;
    }
    for (double& l : logits) l /= total;
    return logits;
}

ScorePrediction GaussianMixtureOracle::predict(const Image& z, double t, const Image* /*cond*/) const {
    const auto [a, s] = sched_.alpha_sigma(t);
    const double var = a * a * s_ * s_ + s * s;
    const auto r = responsibilities(z, t);
    ScorePrediction out{Image(z.height, z.width, z.channels), Image(z.height, z.width, z.channels)};
    for (std::size_t i = 0; i < means_.size(); ++i) {
        if (r[i] == 0.0) continue;
        const Image& mu = means_[i];
        for (std::size_t k = 0; k < z.size(); ++k) {
            out.eps.pixels[k] += r[i] * s * (z.pixels[k] - a * mu.pixels[k]) / var;
            out.x0.pixels[k] += r[i] * (s * s * mu.pixels[k] + a * s_ * s_ * z.pixels[k]) / var;
        }
    }
    return out;
}

double GaussianMixtureOracle::log_density(const Image& z, double t) const {
    const auto [a, s] = sched_.alpha_sigma(t);
    const double var = a * a * s_ * s_ + s * s;
    NERFDIFF_CHECK(var > 0.0, "mixture oracle: degenerate at t = 0 with s = 0");
    const double dim = static_cast<double>(z.size());
    std::vector<double> logs(means_.size());
    for (std::size_t i = 0; i < means_.size(); ++i) {
        double d = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double diff = z.pixels[k] - a * means_[i].pixels[k];
            d += diff * diff;
        }
        logs[i] = std::log(weights_[i]) - 0.5 * d / var;
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    double total = 0.0;
    for (double l : logs) total += std::exp(l - top);
    return top + std::log(total) - 0.5 * dim * std::log(2.0 * std::numbers::pi * var);
}

Image gm_oracle_eps(const GaussianMixtureOracle& oracle, const Image& z, double t) {
    return oracle.predict(z, t, nullptr).eps;
}

GaussianMixtureOracle load_gaussian_mixture(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid mixture description " + path.string() + ": " + e.what());
    }
    std::vector<double> weights;
    std::vector<Image> means;
    try {
        for (const auto& c : doc.at("components")) {
            weights.push_back(c.at("weight").get<double>());
            std::filesystem::path mean = c.at("mean").get<std::string>();
            if (mean.is_relative()) mean = path.parent_path() / mean;
            means.push_back(read_float_image(mean));
        }
        return GaussianMixtureOracle(std::move(weights), std::move(means), doc.value("s", 0.0));
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid mixture description " + path.string() + ": " + e.what());
    }
}

int DenoiserConfig::input_dim() const {
    const int window_values = window * window * channels;
    return window_values * 3 * (conditional ? 2 : 1) + 2 * time_freqs;
}

TinyDenoiser TinyDenoiser::make(const DenoiserConfig& config, std::uint64_t seed, NoiseSchedule sched) {
    NERFDIFF_CHECK(config.window >= 1 && config.window % 2 == 1, "denoiser window must be odd and positive");
    NERFDIFF_CHECK(config.hidden >= 1 && config.hidden_layers >= 1 && config.channels >= 1,
                   "denoiser sizes must be positive");
    NERFDIFF_CHECK(config.sigma_floor > 0.0, "denoiser sigma floor must be positive");
    TinyDenoiser den;
    den.config_ = config;
    den.sched_ = sched;
    std::vector<int> dims = {config.input_dim()};
    for (int l = 0; l < config.hidden_layers; ++l) dims.push_back(config.hidden);
    dims.push_back(config.channels);
    den.mlp_ = Mlp<double>::make(dims, Activation::relu, seed);
    return den;
}

namespace {

struct TimeScales {
    double alpha_over;
    double inv;
};

TimeScales time_scales(const NoiseSchedule& sched, double t, double floor) {
    const auto [a, s] = sched.alpha_sigma(t);
    const double sbar = std::max(s, floor);
    return {a / sbar, 1.0 / sbar};
}

} // namespace

void TinyDenoiser::build_input(const Image& z, double t, const Image* cond, Matrix<double>& input) const {
    NERFDIFF_CHECK(z.channels == config_.channels, "denoiser: channel count mismatch");
    NERFDIFF_CHECK(!config_.conditional || cond != nullptr, "denoiser: conditional model needs a conditioning image");
    if (config_.conditional) require_same_shape(z, *cond, "denoiser conditioning");
    const int h = z.height;
    const int w = z.width;
    const int c = config_.channels;
    const int r = config_.window / 2;
    const int window_values = config_.window * config_.window * c;
    const auto ts = time_scales(sched_, t, config_.sigma_floor);
    input.resize(config_.input_dim(), static_cast<Eigen::Index>(h) * w);
    std::vector<double> emb(static_cast<std::size_t>(2 * config_.time_freqs));
    for (int f = 0; f < config_.time_freqs; ++f) {
        const double x = std::ldexp(std::numbers::pi, f) * t;
        emb[static_cast<std::size_t>(f)] = std::sin(x);
        emb[static_cast<std::size_t>(config_.time_freqs + f)] = std::cos(x);
    }
    const int sources = config_.conditional ? 2 : 1;
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            double* dst = input.col(static_cast<Eigen::Index>(row) * w + col).data();
            for (int src = 0; src < sources; ++src) {
                const Image& img = src == 0 ? z : *cond;
                double* block = dst + src * 3 * window_values;
                int k = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    const int yy = std::clamp(row + dy, 0, h - 1);
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xx = std::clamp(col + dx, 0, w - 1);
                        for (int ch = 0; ch < c; ++ch, ++k) {
                            const double v = img.at(yy, xx, ch);
                            block[k] = v;
                            block[window_values + k] = ts.alpha_over * v;
                            block[2 * window_values + k] = ts.inv * v;
                        }
                    }
                }
            }
            std::copy(emb.begin(), emb.end(), dst + sources * 3 * window_values);
        }
    }
}

void TinyDenoiser::cond_gradient(const Matrix<double>& d_input, double t, Image& d_cond) const {
    NERFDIFF_CHECK(config_.conditional, "denoiser: unconditional model has no conditioning input");
    const int h = d_cond.height;
    const int w = d_cond.width;
    const int c = config_.channels;
    const int r = config_.window / 2;
    const int window_values = config_.window * config_.window * c;
    const auto ts = time_scales(sched_, t, config_.sigma_floor);
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const double* g = d_input.col(static_cast<Eigen::Index>(row) * w + col).data() + 3 * window_values;
            int k = 0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = std::clamp(row + dy, 0, h - 1);
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = std::clamp(col + dx, 0, w - 1);
                    for (int ch = 0; ch < c; ++ch, ++k)
                        d_cond.at(yy, xx, ch) +=
                            g[k] + ts.alpha_over * g[window_values + k] + ts.inv * g[2 * window_values + k];
                }
            }
        }
    }
}

Image TinyDenoiser::predict_v(const Image& z, double t, const Image* cond) const {
    Matrix<double> input, output;
    MlpCache<double> cache;
    build_input(z, t, cond, input);
    mlp_forward(mlp_, input, output, cache);
    Image v(z.height, z.width, z.channels);
    for (Eigen::Index p = 0; p < output.cols(); ++p)
        for (int ch = 0; ch < z.channels; ++ch) v.pixels[static_cast<std::size_t>(p) * z.channels + ch] = output(ch, p);
    return v;
}

ScorePrediction TinyDenoiser::predict(const Image& z, double t, const Image* cond) const {
    auto p = velocity_convert(PredictionKind::v, predict_v(z, t, cond), z, sched_, t);
    return {std::move(p.eps), std::move(p.x0)};
}

std::vector<NamedTensor> TinyDenoiser::tensors() const {
    std::vector<NamedTensor> out;
    out.push_back(
        {"config.denoiser",
         {7},
         {static_cast<float>(config_.channels), static_cast<float>(config_.window), static_cast<float>(config_.hidden),
          static_cast<float>(config_.hidden_layers), static_cast<float>(config_.time_freqs),
          static_cast<float>(config_.conditional), static_cast<float>(config_.sigma_floor)}});
    auto& self = const_cast<Mlp<double>&>(mlp_);
    std::vector<ParamView<double>> views;
    append_mlp_views(self, "denoiser", "denoiser", views);
    for (const auto& v : views) {
        NamedTensor t{v.name, {}, {}};
        for (int d : v.dims) t.dims.push_back(static_cast<std::uint32_t>(d));
        for (double x : v.values) t.values.push_back(static_cast<float>(x));
        out.push_back(std::move(t));
    }
    return out;
}

TinyDenoiser TinyDenoiser::from_tensors(const std::vector<NamedTensor>& tensors) {
    const auto& c = find_tensor(tensors, "config.denoiser").values;
    NERFDIFF_CHECK(c.size() == 7, "config.denoiser has the wrong length");
    DenoiserConfig cfg;
    cfg.channels = static_cast<int>(c[0]);
    cfg.window = static_cast<int>(c[1]);
    cfg.hidden = static_cast<int>(c[2]);
    cfg.hidden_layers = static_cast<int>(c[3]);
    cfg.time_freqs = static_cast<int>(c[4]);
    cfg.conditional = c[5] != 0.0f;
    cfg.sigma_floor = c[6];
    TinyDenoiser den = make(cfg, 0);
    std::vector<ParamView<double>> views;
    append_mlp_views(den.mlp_, "denoiser", "denoiser", views);
    for (auto& v : views) {
        const auto& t = find_tensor(tensors, v.name);
        NERFDIFF_CHECK(t.values.size() == v.values.size(), "tensor " + v.name + " has the wrong size");
        std::copy(t.values.begin(), t.values.end(), v.values.begin());
    }
    return den;
}

void save_denoiser(const std::filesystem::path& path, const TinyDenoiser& den) {
    write_checkpoint(path, den.tensors());
}

TinyDenoiser load_denoiser(const std::filesystem::path& path) {
    return TinyDenoiser::from_tensors(read_checkpoint(path));
}

NoiseDraw draw_noise(const Image& like, std::uint64_t seed) {
    SplitMix rng(seed);
    NoiseDraw d;
    d.t = 1.0 - rng.uniform();
    d.eps = standard_normal(like.height, like.width, like.channels, derive_seed(seed, 1));
    return d;
}

double denoiser_loss(const TinyDenoiser& den, const DenoiserSample& sample, const NoiseDraw& draw,
                     Matrix<double>* input_out, MlpCache<double>* cache, Matrix<double>* d_output) {
    const auto [a, s] = den.schedule().alpha_sigma(draw.t);
    const Image z = add_noise(sample.target, draw.eps, den.schedule(), draw.t);
    Matrix<double> local_input, output;
    MlpCache<double> local_cache;
    Matrix<double>& input = input_out ? *input_out : local_input;
    MlpCache<double>& c = cache ? *cache : local_cache;
    den.build_input(z, draw.t, den.config().conditional ? &sample.cond : nullptr, input);
    mlp_forward(den.mlp(), input, output, c);
    const int ch = z.channels;
    const double count = static_cast<double>(z.size());
    if (d_output) d_output->resize(output.rows(), output.cols());
    double loss = 0.0;
    for (Eigen::Index p = 0; p < output.cols(); ++p) {
        for (int k = 0; k < ch; ++k) {
            const std::size_t idx = static_cast<std::size_t>(p) * ch + k;
            const double v = a * draw.eps.pixels[idx] - s * sample.target.pixels[idx];
            const double diff = output(k, p) - v;
            loss += diff * diff;
            if (d_output) (*d_output)(k, p) = 2.0 * diff / count;
        }
    }
    return loss / count;
}

DenoiserTrainResult denoiser_train(TinyDenoiser& den, std::span<const DenoiserSample> data,
                                   const DenoiserTrainConfig& cfg) {
    NERFDIFF_CHECK(!data.empty(), "denoiser_train: empty dataset");
    NERFDIFF_CHECK(cfg.steps >= 0 && cfg.batch >= 1, "denoiser_train: invalid step or batch count");
    for (const auto& s : data) require_same_shape(s.cond, s.target, "denoiser_train pair");
    DenoiserTrainResult result;
    AdamConfig acfg;
    acfg.default_lr = cfg.lr;
    Adam<double> adam(acfg);
    Mlp<double> grads = den.mlp().zeros_like();
    std::vector<ParamView<double>> pviews, gviews;
    append_mlp_views(den.mlp(), "denoiser", "denoiser", pviews);
    append_mlp_views(grads, "denoiser", "denoiser", gviews);
    const auto gconst = const_views(gviews);
    Matrix<double> input, d_output;
    MlpCache<double> cache;
    for (int step = 0; step < cfg.steps; ++step) {
        zero_views(gviews);
        SplitMix pick(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), 0x70));
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& sample = data[static_cast<std::size_t>(pick() % data.size())];
            const auto draw = draw_noise(sample.target, derive_seed(cfg.seed, static_cast<std::uint64_t>(step), b + 1));
            loss += denoiser_loss(den, sample, draw, &input, &cache, &d_output) / cfg.batch;
            d_output /= cfg.batch;
            mlp_backward<double>(den.mlp(), cache, d_output, grads, nullptr);
        }
        if (!std::isfinite(loss)) throw Error("denoiser_train: loss diverged at step " + std::to_string(step));
        result.loss.push_back(loss);
        adam.step(pviews, gconst);
    }
    return result;
}

double denoiser_eval_loss(const TinyDenoiser& den, std::span<const DenoiserSample> data, int draws,
                          std::uint64_t seed) {
    NERFDIFF_CHECK(!data.empty() && draws >= 1, "denoiser_eval_loss: nothing to evaluate");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (int d = 0; d < draws; ++d)
            total += denoiser_loss(den, data[i], draw_noise(data[i].target, derive_seed(seed, i, d)));
    return total / (static_cast<double>(data.size()) * draws);
}

double zero_predictor_loss(std::span<const DenoiserSample> data, int draws, std::uint64_t seed) {
    NERFDIFF_CHECK(!data.empty() && draws >= 1, "zero_predictor_loss: nothing to evaluate");
    const NoiseSchedule sched;
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (int d = 0; d < draws; ++d) {
            const auto draw = draw_noise(data[i].target, derive_seed(seed, i, d));
            const auto [a, s] = sched.alpha_sigma(draw.t);
            double sum = 0.0;
            for (std::size_t k = 0; k < draw.eps.size(); ++k) {
                const double v = a * draw.eps.pixels[k] - s * data[i].target.pixels[k];
                sum += v * v;
            }
            total += sum / static_cast<double>(draw.eps.size());
        }
    }
    return total / (static_cast<double>(data.size()) * draws);
}

} // namespace nerfdiff

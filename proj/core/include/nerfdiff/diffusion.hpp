// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/checkpoint.hpp"
#include "nerfdiff/image.hpp"
#include "nerfdiff/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace nerfdiff {

/// Cosine schedule: alpha(t) = cos(pi t / 2), sigma(t) = sin(pi t / 2), with
/// the endpoints t = 0 and t = 1 returned exactly.
class NoiseSchedule {
public:
    /// Throws Error for t outside [0, 1].
    std::pair<double, double> alpha_sigma(double t) const;
    double alpha(double t) const { return alpha_sigma(t).first; }
    double sigma(double t) const { return alpha_sigma(t).second; }
    /// alpha^2 / sigma^2 (infinite at t = 0).
    double snr(double t) const;
};

inline std::pair<double, double> alpha_sigma(const NoiseSchedule& sched, double t) { return sched.alpha_sigma(t); }

/// Z_t = alpha_t x0 + sigma_t eps.
Image add_noise(const Image& x0, const Image& eps, const NoiseSchedule& sched, double t);

/// Image of i.i.d. standard normal values.
Image standard_normal(int height, int width, int channels, std::uint64_t seed);

enum class PredictionKind { eps, v, x0 };

struct Prediction {
    Image eps;
    Image v;
    Image x0;
};

/**
 * Converts one parameterization of a denoiser output into all three, using
 * v = alpha eps - sigma x0 and Z = alpha x0 + sigma eps. Recovering from eps
 * needs alpha > 0 and recovering from x0 needs sigma > 0; Error otherwise.
 */
Prediction velocity_convert(PredictionKind kind, const Image& value, const Image& z, const NoiseSchedule& sched,
                            double t);

/// I_t = (Z_t - sigma_t eps) / alpha_t. Throws Error at alpha_t = 0 (t = 1).
Image predict_x0(const Image& z, const Image& eps_hat, const NoiseSchedule& sched, double t);

/// Deterministic DDIM update Z_next = alpha_next x0 + sigma_next eps with
/// x0 = predict_x0(Z, eps). Requires 0 <= t_next <= t <= 1.
Image ddim_step(const Image& z, const Image& eps_hat, const NoiseSchedule& sched, double t, double t_next);

/// The same update from an explicit clean-image estimate; well defined at t = 1.
Image ddim_step_from(const Image& x0_hat, const Image& eps_hat, const NoiseSchedule& sched, double t_next);

/// Knots 1 = t_0 > t_1 > ... > t_steps = 0, uniform in t.
std::vector<double> ddim_grid(int steps);

struct ScorePrediction {
    Image eps;
    Image x0;
};

/// Noise predictor eps(Z_t, t, cond). Implementations report the matching
/// clean-image estimate as well so that t = 1 needs no division by alpha.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;
    virtual ScorePrediction predict(const Image& z, double t, const Image* cond) const = 0;
    Image eps(const Image& z, double t, const Image* cond) const { return predict(z, t, cond).eps; }
};

/// Z_1 ~ N(0, I) from `seed`, then `steps` DDIM updates down to t = 0.
Image ddim_sample(const ScoreModel& model, const Image* cond, int height, int width, int channels, int steps,
                  std::uint64_t seed, const NoiseSchedule& sched = {});

/**
 * Exact score model of x0 ~ sum_i w_i N(mu_i, s^2 I). The noisy marginal is
 * sum_i w_i N(alpha mu_i, (alpha^2 s^2 + sigma^2) I); eps and the posterior
 * mean follow from per-component responsibilities computed in log space.
 */
class GaussianMixtureOracle : public ScoreModel {
public:
    GaussianMixtureOracle(std::vector<double> weights, std::vector<Image> means, double s, NoiseSchedule sched = {});

    ScorePrediction predict(const Image& z, double t, const Image* cond) const override;
    /// log p_t(Z), including the normalization constant.
    double log_density(const Image& z, double t) const;
    /// Posterior component probabilities given Z_t.
    std::vector<double> responsibilities(const Image& z, double t) const;

    const std::vector<double>& weights() const { return weights_; }
    const std::vector<Image>& means() const { return means_; }
    double s() const { return s_; }

private:
    std::vector<double> weights_;
    std::vector<Image> means_;
    double s_;
    NoiseSchedule sched_;
};

/// eps = -sigma_t grad log p_t(Z_t) for the oracle's mixture.
Image gm_oracle_eps(const GaussianMixtureOracle& oracle, const Image& z, double t);

/// JSON: {"s": number, "components": [{"weight": number, "mean": "<float image path>"}]}.
/// Relative mean paths resolve against the JSON file's directory.
GaussianMixtureOracle load_gaussian_mixture(const std::filesystem::path& path);

struct DenoiserConfig {
    int channels = 3;
    int window = 3;
    int hidden = 64;
    int hidden_layers = 2;
    int time_freqs = 8;
    /// When false the conditioning image is ignored (not part of the input).
    bool conditional = true;
    /// Floor on sigma in the noise-level input scaling.
    double sigma_floor = 0.05;

    int input_dim() const;
};

/**
 * Per-pixel v-predictor. Each pixel sees the window x window neighbourhood of
 * Z_t (and of the conditioning image), clamped at the borders. Every window
 * enters three times, scaled by 1, alpha/s and 1/s with s = max(sigma, floor),
 * followed by a sinusoidal embedding of t.
 */
class TinyDenoiser : public ScoreModel {
public:
    static TinyDenoiser make(const DenoiserConfig& config, std::uint64_t seed, NoiseSchedule sched = {});

    ScorePrediction predict(const Image& z, double t, const Image* cond) const override;
    Image predict_v(const Image& z, double t, const Image* cond) const;

    /// Input matrix (input_dim x H*W), row-major pixel order in the columns.
    void build_input(const Image& z, double t, const Image* cond, Matrix<double>& input) const;
    /// Folds the gradient w.r.t. the input matrix back onto the conditioning
    /// image (accumulated into d_cond).
    void cond_gradient(const Matrix<double>& d_input, double t, Image& d_cond) const;

    const DenoiserConfig& config() const { return config_; }
    const NoiseSchedule& schedule() const { return sched_; }
    Mlp<double>& mlp() { return mlp_; }
    const Mlp<double>& mlp() const { return mlp_; }

    std::vector<NamedTensor> tensors() const;
    static TinyDenoiser from_tensors(const std::vector<NamedTensor>& tensors);

private:
    DenoiserConfig config_;
    NoiseSchedule sched_;
    Mlp<double> mlp_;
};

void save_denoiser(const std::filesystem::path& path, const TinyDenoiser& den);
TinyDenoiser load_denoiser(const std::filesystem::path& path);

/// One (conditioning rendering, target image) training pair.
struct DenoiserSample {
    Image cond;
    Image target;
};

struct DenoiserTrainConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct DenoiserTrainResult {
    std::vector<double> loss;
};

/// Noise draw used for one v-prediction loss term.
struct NoiseDraw {
    double t = 1.0;
    Image eps;
};

NoiseDraw draw_noise(const Image& like, std::uint64_t seed);

/// Mean squared v error over pixels and channels for one draw, with gradient
/// w.r.t. the network output when `d_output` is non-null.
double denoiser_loss(const TinyDenoiser& den, const DenoiserSample& sample, const NoiseDraw& draw,
                     Matrix<double>* input_out = nullptr, MlpCache<double>* cache = nullptr,
                     Matrix<double>* d_output = nullptr);

/// Adam on the v-prediction MSE with t ~ U(0, 1]. Throws on an empty dataset.
DenoiserTrainResult denoiser_train(TinyDenoiser& den, std::span<const DenoiserSample> data,
                                   const DenoiserTrainConfig& cfg);

/// Held-out v-MSE averaged over `draws` seeded draws per sample.
double denoiser_eval_loss(const TinyDenoiser& den, std::span<const DenoiserSample> data, int draws, std::uint64_t seed);

/// Loss of the predictor v = 0 under the same draws.
double zero_predictor_loss(std::span<const DenoiserSample> data, int draws, std::uint64_t seed);

} // namespace nerfdiff

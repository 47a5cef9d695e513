// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/adam.hpp"
#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/field.hpp"
#include "nerfdiff/image.hpp"
#include "nerfdiff/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace nerfdiff {

struct PosedImage {
    Camera camera;
    Image image;
};

template <typename T>
struct LossAndGrad {
    double loss = 0.0;
    std::vector<T> grad;
};

/// Mean of squared differences and its gradient 2 (r - t) / count.
template <typename T>
LossAndGrad<T> mse_ray_loss(std::span<const T> rendered, std::span<const T> target);

struct FitConfig {
    int steps = 2000;
    int batch_rays = 4096;
    double lr_mlp = 1e-4;
    double lr_triplane = 5e-2;
    /// Global-norm clipping threshold; 0 leaves gradients untouched.
    double clip_norm = 0.0;
    RenderConfig render{16, 16};
    std::uint64_t seed = 0;
};

AdamConfig field_adam_config(double lr_mlp, double lr_triplane, double clip_norm);

/**
 * Adam on the ray MSE against a pool of (ray, target color) pairs. Every step
 * draws `batch_rays` pool entries uniformly with replacement.
 */
template <typename T>
class RayFitter {
public:
    RayFitter(FieldParams<T>& params, const FitConfig& cfg);

    /// Replaces the pool; targets hold three values per ray.
    void set_pool(std::vector<Ray> rays, std::vector<T> targets);
    /// Updates the targets of an unchanged pool.
    void set_targets(std::vector<T> targets);

    /// One Adam step. Returns the batch loss measured before the update.
    /// Throws Error on a non-finite loss or non-finite parameters afterwards.
    double step(std::uint64_t step_seed);

    /// Loss and gradient of one batch without updating anything.
    double batch_gradient(std::uint64_t step_seed, FieldParams<T>& grads) const;

    std::size_t pool_size() const { return rays_.size(); }

private:
    FieldParams<T>& params_;
    FitConfig cfg_;
    Adam<T> adam_;
    FieldParams<T> grads_;
    std::vector<Ray> rays_;
    std::vector<T> targets_;
};

/// All rays of the views (row-major per view) and their target colors.
template <typename T>
void make_ray_pool(std::span<const PosedImage> views, std::vector<Ray>& rays, std::vector<T>& targets);

struct FitResult {
    std::vector<double> loss;
};

/// Per-scene reconstruction: rays drawn uniformly over all views' pixels with
/// step seed derive_seed(cfg.seed, step).
template <typename T>
FitResult fit_scene(FieldParams<T>& params, std::span<const PosedImage> views, const FitConfig& cfg);

struct JointScene {
    FieldParams<float> field;
    std::vector<PosedImage> views;
};

struct JointConfig {
    int steps = 500;
    double lambda_ic = 1.0;
    double lambda_dm = 1.0;
    FitConfig fit;
    double lr_denoiser = 1e-3;
    /// Side of the square crop rendered for the denoising term.
    int crop = 16;
    double ema_decay = 0.9999;
};

struct JointStepLoss {
    int step = 0;
    double loss_ic = 0.0;
    double loss_dm = 0.0;
    double total = 0.0;
};

struct JointResult {
    std::vector<JointStepLoss> losses;
    TinyDenoiser ema_denoiser;
};

/**
 * Losses and gradients of one joint step on one scene. L_IC is the ray MSE
 * (same draws as fit_scene); L_DM is the v-prediction loss on a random crop
 * of a random view, conditioned on the NeRF rendering of that crop, so its
 * gradient reaches the NeRF through the conditioning. Gradients are scaled by
 * the lambdas and accumulated into the given buffers.
 */
JointStepLoss joint_gradients(const JointScene& scene, const TinyDenoiser& den, const JointConfig& cfg, int step,
                              FieldParams<float>& field_grads, Mlp<double>& den_grads);

/// Minimizes lambda_ic L_IC + lambda_dm L_DM over every scene's field and the
/// shared denoiser; scene step % count is visited at each step. Scenes need at
/// least two views.
JointResult train_joint(std::vector<JointScene>& scenes, TinyDenoiser& den, const JointConfig& cfg);

/// CSV step,loss_ic,loss_dm,total.
void write_loss_csv(const std::filesystem::path& path, const std::vector<JointStepLoss>& rows);

} // namespace nerfdiff

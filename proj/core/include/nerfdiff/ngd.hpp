// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/field.hpp"
#include "nerfdiff/geometry.hpp"
#include "nerfdiff/optimize.hpp"
#include "nerfdiff/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace nerfdiff {

/**
 * eps~ = eps + gamma (sigma_t / alpha_t) (I_t - I_nerf). Throws Error at
 * t = 1 (alpha = 0) and on shape mismatches.
 */
Image guided_eps(const Image& eps_hat, const Image& x0_hat, const Image& nerf, const NoiseSchedule& sched, double t,
                 double gamma);

enum class GammaMode { snr, constant };

/// Which image supervises the NeRF in the distillation loss: the model's own
/// prediction I_t, or the clean image implied by the guided score.
enum class TargetMode { unguided, guided };

struct GuidanceConfig {
    int ddim_steps = 64;
    int nerf_steps = 64;
    int batch_rays = 4096;
    double lr_mlp = 1e-4;
    double lr_triplane = 5e-2;
    double clip_norm = 0.0;
    GammaMode gamma_mode = GammaMode::snr;
    /// Guidance weight in constant mode.
    double gamma = 1.0;
    /// Optional gamma(t) override; when set it replaces gamma_mode.
    std::function<double(double)> gamma_fn;
    TargetMode target = TargetMode::unguided;
    /// Adds the input view's pixels (with their fixed colors) to the ray pool.
    bool include_input = true;
    /// Renders that condition the model and guide the sampler.
    RenderConfig guidance_render{32, 32};
    /// Renders inside the NeRF optimization steps.
    RenderConfig train_render{16, 16};
    int threads = 1;
};

/// gamma at time t under the config (alpha^2 / sigma^2 in SNR mode).
double guidance_gamma(const GuidanceConfig& cfg, const NoiseSchedule& sched, double t);

/**
 * Weight lambda of the guided clean image x0~ = I_t - lambda (I_t - I_nerf),
 * lambda = gamma sigma^2 / alpha^2. At t = 1 the ratio is undefined and any
 * positive gamma is taken as full replacement (lambda = 1).
 */
double guidance_lambda(const GuidanceConfig& cfg, const NoiseSchedule& sched, double t);

/// Score model used for virtual view k.
using ViewModelFn = std::function<const ScoreModel&(std::size_t)>;

struct PriorSample {
    std::vector<Pose> poses;
    /// Positions of the poses in the dense candidate sequence.
    std::vector<int> indices;
};

/// Look-at cameras (world z up) at every `stride`-th point of a
/// K * stride + 1 point Archimedean spiral over the sphere of `radius`.
PriorSample sample_prior_spiral(int count, double radius, double turns, int stride);

/// Least-squares point closest to every line. Throws Error when fewer than
/// two axes are given or all axes are parallel.
Vec3 estimate_origin_from_axes(std::span<const Ray> axes);

/// Unit normal of the best-fit plane through the centers, oriented so that
/// it points against the mean forward axis. Throws Error for fewer than
/// three or collinear centers.
Vec3 estimate_up(std::span<const Vec3> centers, std::span<const Vec3> forwards);

/**
 * `count` look-at cameras evenly spaced on the circle of `radius` around the
 * axis (origin, up), lifted by `height` along up. The first camera sits in
 * direction `start` (projected onto the plane); any direction is used when
 * start is zero or parallel to up.
 */
PriorSample sample_prior_circle(int count, const Vec3& origin, const Vec3& up, double radius, double height = 0.0,
                                const Vec3& start = Vec3::Zero());

/// Circle prior from observed cameras: origin from their optical axes, up
/// from their centers, height and radius from their mean offsets, starting at
/// the first camera's azimuth.
PriorSample circle_prior_from_cameras(int count, std::span<const Pose> cameras);

/// Cameras sharing the intrinsics and depth bounds of `like`.
std::vector<Camera> cameras_from_poses(std::span<const Pose> poses, const Camera& like);

struct NgdDiagnostic {
    int outer_step = 0;
    double t = 1.0;
    /// Distillation loss over full images at sampling time, before any
    /// NeRF update of the step.
    double eq8_loss = 0.0;
    /// Mean over views of PSNR(I_t, NeRF render).
    double mean_view_psnr = 0.0;
    /// Mean ray-batch loss over the step's NeRF updates.
    double fit_loss = 0.0;
};

struct NgdResult {
    std::vector<NgdDiagnostic> diagnostics;
    /// Diffusion states at t = 0.
    std::vector<Image> views;
};

/**
 * Alternates guided multi-view DDIM with NeRF finetuning. Per outer step t_i:
 * render every view, query its model conditioned on the render, run
 * `nerf_steps` Adam steps on the distillation targets (rays drawn across all
 * views), re-render and take the guided DDIM step to t_{i+1}. Z_1 is drawn
 * independently per view.
 */
NgdResult ngd_finetune(FieldParams<float>& field, const ViewModelFn& model, const PosedImage* input,
                       std::span<const Camera> views, const GuidanceConfig& cfg, std::uint64_t seed);

struct DistillResult {
    std::vector<Image> samples;
    std::vector<double> loss;
};

/// Unguided DDIM sample per view (conditioned on the initial render), then
/// ddim_steps * nerf_steps Adam steps of plain reconstruction on the samples.
DistillResult direct_distill(FieldParams<float>& field, const ViewModelFn& model, const PosedImage* input,
                             std::span<const Camera> views, const GuidanceConfig& cfg, std::uint64_t seed);

struct SdsConfig {
    /// Matches the NGD budget of ddim_steps * nerf_steps Adam steps.
    int iterations = 4096;
    int nerf_steps = 1;
    double t_min = 0.02;
    double t_max = 0.98;
};

struct SdsResult {
    std::vector<double> loss;
};

/**
 * Score distillation: each iteration picks a random view and t ~ U(t_min,
 * t_max), noises the current render, denoises it with the model and takes
 * `nerf_steps` Adam steps pulling that view's render toward the prediction.
 */
SdsResult sds_finetune(FieldParams<float>& field, const ViewModelFn& model, const PosedImage* input,
                       std::span<const Camera> views, const GuidanceConfig& cfg, const SdsConfig& sds,
                       std::uint64_t seed);

/// CSV outer_step,t,eq8_loss,mean_view_psnr.
void write_diagnostics_csv(const std::filesystem::path& path, const std::vector<NgdDiagnostic>& rows);

} // namespace nerfdiff

// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/field.hpp"
#include "nerfdiff/geometry.hpp"
#include "nerfdiff/image.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace nerfdiff {

struct RenderConfig {
    int coarse_samples = 64;
    int fine_samples = 64;
    /// Random offsets inside each stratum; off puts samples at stratum midpoints.
    bool jitter = true;
    Vec3 background = Vec3::Ones();
    int chunk_rays = 64;
    int threads = 1;
};

/// One draw per equal-length stratum of [t_near, t_far], ascending.
std::vector<double> sample_stratified(double t_near, double t_far, int n, std::uint64_t seed, bool jitter = true);
inline std::vector<double> sample_stratified(const Ray& ray, int n, std::uint64_t seed, bool jitter = true) {
    return sample_stratified(ray.t_near, ray.t_far, n, seed, jitter);
}

/**
 * Inverse-CDF samples from the piecewise-constant PDF over bins around the
 * coarse samples (edges at t_near, the midpoints between neighbours, and
 * t_far). Bin mass is weight_i + 0.01 * mean(weight); all-zero weights give a
 * uniform PDF. Draws are stratified in CDF space and returned ascending.
 */
std::vector<double> sample_importance(std::span<const double> coarse_t, std::span<const double> weights, double t_near,
                                      double t_far, int n, std::uint64_t seed, bool jitter = true);

struct CompositeResult {
    Vec3 rgb = Vec3::Zero();
    double opacity = 0.0;
    /// Expected termination distance, sum of w_i t_i.
    double depth = 0.0;
    std::vector<double> weights;
};

/**
 * Alpha compositing of samples at ascending distances `t` (rgb holds three
 * values per sample). delta_i = t_{i+1} - t_i and the last sample extends to
 * t_far. rgb = sum w_i c_i + T_final * background. Throws on non-finite or
 * negative densities.
 */
CompositeResult composite(std::span<const double> t, double t_far, std::span<const double> rgb,
                          std::span<const double> density, const Vec3& background = Vec3::Zero());

/// Gradient of <upstream, composite(...).rgb> with respect to sample colors
/// (three per sample) and densities.
void composite_backward(std::span<const double> t, double t_far, std::span<const double> rgb,
                        std::span<const double> density, const Vec3& background, const Vec3& upstream,
                        std::span<double> d_rgb, std::span<double> d_density);

template <typename T>
struct RayRenderOutput {
    std::vector<T> rgb; // three values per ray
    std::vector<T> opacity;
    std::vector<T> depth;
};

/// Receives the rendered colors of rays [first, first + n) and writes the loss
/// gradient for them into d_rgb. Called once per chunk, possibly concurrently
/// for disjoint ranges.
template <typename T>
using UpstreamFn = std::function<void(std::size_t first, std::span<const T> rgb, std::span<T> d_rgb)>;

/**
 * Renders world-space rays through the field (coarse stratified pass, then an
 * importance pass; all samples are composited). seeds[i] drives ray i, so the
 * result does not depend on chunking or thread count.
 */
template <typename T>
void render_rays(const FieldParams<T>& params, std::span<const Ray> rays, std::span<const std::uint64_t> seeds,
                 const RenderConfig& cfg, RayRenderOutput<T>& out);

/// Forward and backward pass over the rays: `upstream` supplies dLoss/drgb per
/// chunk and parameter gradients accumulate into `grads`. Sample positions are
/// constants. `out`, when given, receives the forward result.
template <typename T>
void render_rays_backward(const FieldParams<T>& params, std::span<const Ray> rays, std::span<const std::uint64_t> seeds,
                          const RenderConfig& cfg, const UpstreamFn<T>& upstream, FieldParams<T>& grads,
                          RayRenderOutput<T>* out = nullptr);

struct RenderedImage {
    Image rgb;
    Image opacity;
    Image depth;
};

template <typename T>
CompositeResult render_pixel(const FieldParams<T>& params, const Ray& ray, const RenderConfig& cfg, std::uint64_t seed);

/// Ray (i, j) uses seed derive_seed(seed, j * width + i).
template <typename T>
RenderedImage render_image(const FieldParams<T>& params, const Camera& camera, const RenderConfig& cfg,
                           std::uint64_t seed);

template <typename T>
void render_backward(const FieldParams<T>& params, const Ray& ray, const RenderConfig& cfg, std::uint64_t seed,
                     const Vec3& upstream, FieldParams<T>& grads);

/// Per-ray seeds for a camera's pixels (row-major), matching render_image.
std::vector<std::uint64_t> pixel_seeds(const Camera& camera, std::uint64_t seed);

/// Renders one ray at caller-chosen distances (no sampler involved).
template <typename T>
CompositeResult render_ray_fixed(const FieldParams<T>& params, const Ray& ray, std::span<const double> t,
                                 const Vec3& background);

} // namespace nerfdiff

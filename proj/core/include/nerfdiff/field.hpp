// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/geometry.hpp"
#include "nerfdiff/mlp.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nerfdiff {

/**
 * Row-major (rows x cols x channels) grid of learnable features, sampled
 * bilinearly with clamp-to-edge. Cell centers sit at normalized coordinate
 * -1 + (2k + 1) / n along each axis, matching image pixel centers.
 */
template <typename T>
struct FeatureGrid {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::vector<T> values;

    FeatureGrid() = default;
    FeatureGrid(int rows, int cols, int channels, T fill = T(0));

    T* cell(int row, int col) { return values.data() + (static_cast<std::size_t>(row) * cols + col) * channels; }
    const T* cell(int row, int col) const {
        return values.data() + (static_cast<std::size_t>(row) * cols + col) * channels;
    }
};

/// Image-space feature volume for the pixel-aligned conditioning mode.
template <typename T>
using PixelFeatureImage = FeatureGrid<T>;

/**
 * Camera-aligned triplane. The xy plane is indexed by (x~_y row, x~_x col),
 * xz by (x~_z, x~_x) and yz by (x~_z, x~_y), where x~ is the frustum
 * contraction of a point in the reference camera: x~_x horizontal image axis,
 * x~_y vertical image axis (down), x~_z depth.
 */
template <typename T>
struct Triplane {
    FeatureGrid<T> xy;
    FeatureGrid<T> xz;
    FeatureGrid<T> yz;

    Triplane() = default;
    Triplane(int resolution, int channels, T fill = T(0));
    int channels() const { return xy.channels; }
    int resolution() const { return xy.rows; }
};

enum class Conditioning { triplane, pixel_aligned };

struct FieldConfig {
    Conditioning conditioning = Conditioning::triplane;
    int resolution = 64;
    int channels = 48;
    int hidden = 64;
    Activation hidden_activation = Activation::relu;
    bool use_direction = false;
    int direction_freqs = 4;
    /// Encodes the contracted position; only meaningful in pixel-aligned mode.
    bool use_posenc = false;
    int position_freqs = 6;
    double init_feature_std = 0.05;

    int input_dim() const;
};

/**
 * Radiance field parameters (MLP weights and the conditioning features).
 * The field is defined in the frame of `reference`, the input camera; its
 * frustum [t_near, t_far] bounds the region where density may be nonzero.
 */
template <typename T>
struct FieldParams {
    FieldConfig config;
    Camera reference;
    std::variant<Triplane<T>, PixelFeatureImage<T>> features;
    Mlp<T> mlp;

    bool is_triplane() const { return std::holds_alternative<Triplane<T>>(features); }
    Triplane<T>& triplane() { return std::get<Triplane<T>>(features); }
    const Triplane<T>& triplane() const { return std::get<Triplane<T>>(features); }
    PixelFeatureImage<T>& pixel_features() { return std::get<PixelFeatureImage<T>>(features); }
    const PixelFeatureImage<T>& pixel_features() const { return std::get<PixelFeatureImage<T>>(features); }

    /// Same shapes, all values zero. Used as the gradient accumulator.
    FieldParams zeros_like() const;
    bool all_finite() const;

    template <typename U>
    FieldParams<U> cast() const;
};

template <typename T>
template <typename U>
FieldParams<U> FieldParams<T>::cast() const {
    auto cast_grid = [](const FeatureGrid<T>& g) {
        FeatureGrid<U> out(g.rows, g.cols, g.channels);
        for (std::size_t k = 0; k < g.values.size(); ++k) out.values[k] = static_cast<U>(g.values[k]);
        return out;
    };
    FieldParams<U> out;
    out.config = config;
    out.reference = reference;
    out.mlp = mlp.template cast<U>();
    if (is_triplane()) {
        Triplane<U> tp;
        tp.xy = cast_grid(triplane().xy);
        tp.xz = cast_grid(triplane().xz);
        tp.yz = cast_grid(triplane().yz);
        out.features = std::move(tp);
    } else {
        out.features = cast_grid(pixel_features());
    }
    return out;
}

/// Features ~ N(0, init_feature_std^2); MLP uniform fan-in initialization.
template <typename T>
FieldParams<T> make_field(const FieldConfig& config, const Camera& reference, std::uint64_t seed);

/// "triplane.xy/xz/yz" (or "features" in pixel-aligned mode) in group
/// "triplane", then "mlp.<l>.weight/bias" in group "mlp".
template <typename T>
std::vector<ParamView<T>> parameter_views(FieldParams<T>& params);
template <typename T>
std::vector<ParamView<const T>> parameter_views(const FieldParams<T>& params);

/// Sum of bilinear samples of the three planes at x~ in [-1, 1]^3. Throws
/// Error for coordinates outside the cube.
template <typename T>
std::vector<T> triplane_query(const Triplane<T>& triplane, const Vec3& contracted);

/// Bilinear sample of the feature image at P(x). Throws Error for points at or
/// behind the camera.
template <typename T>
std::vector<T> pixel_query(const PixelFeatureImage<T>& image, const Vec3& point_camera, const Intrinsics& intr);

/// [v?, sin(2^k pi v), cos(2^k pi v) for k < num_freqs]; each frequency block
/// holds all sines of v followed by all cosines.
std::vector<double> positional_encoding(std::span<const double> v, int num_freqs, bool prepend_input = true);

template <typename T>
struct FieldSample {
    std::array<T, 3> rgb{};
    T density = T(0);
};

/**
 * Batched field evaluation. forward() keeps what backward() needs, so one
 * FieldBatch holds the state of one batch of samples at a time.
 *
 * Points and directions are in the reference camera frame. Points outside the
 * reference frustum evaluate to zero density and zero color and receive no
 * gradient.
 */
template <typename T>
class FieldBatch {
public:
    void forward(const FieldParams<T>& params, std::span<const Vec3> points, std::span<const Vec3> directions);

    std::size_t size() const { return inside_.size(); }
    T density(std::size_t i) const { return density_[i]; }
    T rgb(std::size_t i, int c) const { return rgb_(c, static_cast<Eigen::Index>(i)); }
    bool inside(std::size_t i) const { return inside_[i] != 0; }
    /// Smallest |pre-activation| of any hidden unit over the batch (inside
    /// samples only); finite-difference checks stay away from ReLU kinks.
    T min_hidden_margin() const;

    /// d_rgb holds 3 values per sample, d_density one. Gradients accumulate
    /// into `grads`.
    void backward(const FieldParams<T>& params, std::span<const T> d_rgb, std::span<const T> d_density,
                  FieldParams<T>& grads);

private:
    struct Corners {
        std::array<std::uint32_t, 12> offset; // three planes x four corners
        std::array<T, 12> weight;
    };

    std::vector<std::uint8_t> inside_;
    std::vector<std::uint32_t> active_; // compact column -> sample index
    std::vector<Corners> corners_;      // per active sample
    Matrix<T> input_;
    Matrix<T> raw_;
    Matrix<T> rgb_;
    std::vector<T> density_;
    MlpCache<T> cache_;
    Matrix<T> d_raw_;
    Matrix<T> d_input_;
};

/// Single-point evaluation: rgb = sigmoid(head), density = softplus(head).
template <typename T>
FieldSample<T> field_eval(const FieldParams<T>& params, const Vec3& point_camera, const Vec3& direction_camera);

/// Accumulates the gradient of <upstream, (rgb, density)> into grads.
template <typename T>
void field_eval_backward(const FieldParams<T>& params, const Vec3& point_camera, const Vec3& direction_camera,
                         const std::array<T, 4>& upstream, FieldParams<T>& grads);

} // namespace nerfdiff

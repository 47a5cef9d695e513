// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/field.hpp"

#include "nerfdiff/error.hpp"
#include "nerfdiff/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace nerfdiff {

namespace {

template <typename T>
T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
T softplus(T x) {
    return x > T(20) ? x : std::log1p(std::exp(x));
}

// Continuous cell-center coordinate along one axis, clamped to the grid.
struct AxisLerp {
    int lo;
    int hi;
    double frac;
};

AxisLerp axis_lerp(double s, int n) {
    const double c = std::clamp((s + 1.0) * 0.5 * n - 0.5, 0.0, static_cast<double>(n - 1));
    const int lo = std::min(static_cast<int>(std::floor(c)), n - 1);
    if (lo >= n - 1) return {n - 1, n - 1, 0.0};
    return {lo, lo + 1, c - lo};
}

// Four bilinear taps of a grid at normalized (row, col) coordinates.
template <typename T>
void bilinear_taps(const FeatureGrid<T>& grid, double s_row, double s_col, std::uint32_t* offset, T* weight) {
    const AxisLerp r = axis_lerp(s_row, grid.rows);
    const AxisLerp c = axis_lerp(s_col, grid.cols);
    const auto at = [&](int row, int col) {
        return static_cast<std::uint32_t>((static_cast<std::size_t>(row) * grid.cols + col) * grid.channels);
    };
    offset[0] = at(r.lo, c.lo);
    offset[1] = at(r.lo, c.hi);
    offset[2] = at(r.hi, c.lo);
    offset[3] = at(r.hi, c.hi);
    weight[0] = static_cast<T>((1.0 - r.frac) * (1.0 - c.frac));
    weight[1] = static_cast<T>((1.0 - r.frac) * c.frac);
    weight[2] = static_cast<T>(r.frac * (1.0 - c.frac));
    weight[3] = static_cast<T>(r.frac * c.frac);
}

template <typename T>
void accumulate_taps(const FeatureGrid<T>& grid, const std::uint32_t* offset, const T* weight, T* out) {
    const int channels = grid.channels;
    for (int k = 0; k < 4; ++k) {
        const T w = weight[k];
        if (w == T(0)) continue;
        const T* src = grid.values.data() + offset[k];
        for (int c = 0; c < channels; ++c) out[c] += w * src[c];
    }
}

// out = sum of N weighted taps, written in one pass over the channels.
template <int N, typename T>
void gather_taps(const T* const* src, const T* weight, int channels, T* __restrict out) {
    T w[N];
    const T* p[N];
    for (int k = 0; k < N; ++k) {
        w[k] = weight[k];
        p[k] = src[k];
    }
    for (int c = 0; c < channels; ++c) {
        T acc = T(0);
        for (int k = 0; k < N; ++k) acc += w[k] * p[k][c];
        out[c] = acc;
    }
}

template <typename T>
void scatter_taps(FeatureGrid<T>& grid, const std::uint32_t* offset, const T* weight, const T* grad) {
    const int channels = grid.channels;
    for (int k = 0; k < 4; ++k) {
        const T w = weight[k];
        if (w == T(0)) continue;
        T* dst = grid.values.data() + offset[k];
        for (int c = 0; c < channels; ++c) dst[c] += w * grad[c];
    }
}

template <typename T>
bool grid_finite(const FeatureGrid<T>& g) {
    return std::all_of(g.values.begin(), g.values.end(), [](T v) { return std::isfinite(v); });
}

void encode_into(std::span<const double> v, int num_freqs, bool prepend, double* out) {
    std::size_t k = 0;
    if (prepend)
        for (double x : v) out[k++] = x;
    for (int f = 0; f < num_freqs; ++f) {
        const double scale = std::ldexp(std::numbers::pi, f);
        for (double x : v) out[k++] = std::sin(scale * x);
        for (double x : v) out[k++] = std::cos(scale * x);
    }
}

int encoded_size(int n, int num_freqs, bool prepend) { return n * 2 * num_freqs + (prepend ? n : 0); }

} // namespace

template <typename T>
FeatureGrid<T>::FeatureGrid(int r, int c, int ch, T fill)
    : rows(r), cols(c), channels(ch), values(static_cast<std::size_t>(r) * c * ch, fill) {
    NERFDIFF_CHECK(r >= 1 && c >= 1 && ch >= 1, "feature grid dimensions must be positive");
}

template <typename T>
Triplane<T>::Triplane(int resolution, int channels, T fill)
    : xy(resolution, resolution, channels, fill), xz(resolution, resolution, channels, fill),
      yz(resolution, resolution, channels, fill) {}

int FieldConfig::input_dim() const {
    int dim = channels;
    if (use_direction) dim += encoded_size(3, direction_freqs, true);
    if (use_posenc) dim += encoded_size(3, position_freqs, true);
    return dim;
}

template <typename T>
FieldParams<T> FieldParams<T>::zeros_like() const {
    FieldParams<T> out;
    out.config = config;
    out.reference = reference;
    out.mlp = mlp.zeros_like();
    if (is_triplane()) {
        out.features = Triplane<T>(triplane().resolution(), triplane().channels());
    } else {
        const auto& img = pixel_features();
        out.features = PixelFeatureImage<T>(img.rows, img.cols, img.channels);
    }
    return out;
}

template <typename T>
bool FieldParams<T>::all_finite() const {
    if (!mlp.all_finite()) return false;
    if (is_triplane()) {
        const auto& tp = triplane();
        return grid_finite(tp.xy) && grid_finite(tp.xz) && grid_finite(tp.yz);
    }
    return grid_finite(pixel_features());
}

template <typename T>
FieldParams<T> make_field(const FieldConfig& config, const Camera& reference, std::uint64_t seed) {
    NERFDIFF_CHECK(config.resolution >= 1 && config.channels >= 1 && config.hidden >= 1,
                   "field resolution, channels and hidden width must be positive");
    NERFDIFF_CHECK(reference.t_near < reference.t_far, "reference camera needs t_near < t_far");
    reference.intrinsics.validate();
    FieldParams<T> fp;
    fp.config = config;
    fp.reference = reference;
    SplitMix rng(derive_seed(seed, 0x74706c));
    auto fill = [&](FeatureGrid<T>& g) {
        for (T& v : g.values) v = static_cast<T>(config.init_feature_std * rng.normal());
    };
    if (config.conditioning == Conditioning::triplane) {
        Triplane<T> tp(config.resolution, config.channels);
        fill(tp.xy);
        fill(tp.xz);
        fill(tp.yz);
        fp.features = std::move(tp);
    } else {
        PixelFeatureImage<T> img(config.resolution, config.resolution, config.channels);
        fill(img);
        fp.features = std::move(img);
    }
    fp.mlp = Mlp<T>::make({config.input_dim(), config.hidden, 4}, config.hidden_activation, derive_seed(seed, 1));
    return fp;
}

template <typename T>
std::vector<ParamView<T>> parameter_views(FieldParams<T>& params) {
    std::vector<ParamView<T>> views;
    auto grid_view = [](std::string name, FeatureGrid<T>& g) {
        return ParamView<T>{std::move(name), "triplane", {g.rows, g.cols, g.channels}, std::span<T>(g.values)};
    };
    if (params.is_triplane()) {
        auto& tp = params.triplane();
        views.push_back(grid_view("triplane.xy", tp.xy));
        views.push_back(grid_view("triplane.xz", tp.xz));
        views.push_back(grid_view("triplane.yz", tp.yz));
    } else {
        views.push_back(grid_view("features", params.pixel_features()));
    }
    append_mlp_views(params.mlp, "mlp", "mlp", views);
    return views;
}

template <typename T>
std::vector<ParamView<const T>> parameter_views(const FieldParams<T>& params) {
    return const_views(parameter_views(const_cast<FieldParams<T>&>(params)));
}

template <typename T>
std::vector<T> triplane_query(const Triplane<T>& triplane, const Vec3& x) {
    NERFDIFF_CHECK(x.cwiseAbs().maxCoeff() <= 1.0, "triplane_query: coordinate outside [-1, 1]^3");
    std::vector<T> out(static_cast<std::size_t>(triplane.channels()), T(0));
    std::uint32_t offset[4];
    T weight[4];
    bilinear_taps(triplane.xy, x.y(), x.x(), offset, weight);
    accumulate_taps(triplane.xy, offset, weight, out.data());
    bilinear_taps(triplane.xz, x.z(), x.x(), offset, weight);
    accumulate_taps(triplane.xz, offset, weight, out.data());
    bilinear_taps(triplane.yz, x.z(), x.y(), offset, weight);
    accumulate_taps(triplane.yz, offset, weight, out.data());
    return out;
}

template <typename T>
std::vector<T> pixel_query(const PixelFeatureImage<T>& image, const Vec3& point_camera, const Intrinsics& intr) {
    const Vec2 uv = project(point_camera, intr);
    std::vector<T> out(static_cast<std::size_t>(image.channels), T(0));
    std::uint32_t offset[4];
    T weight[4];
    bilinear_taps(image, uv.y(), uv.x(), offset, weight);
    accumulate_taps(image, offset, weight, out.data());
    return out;
}

std::vector<double> positional_encoding(std::span<const double> v, int num_freqs, bool prepend_input) {
    NERFDIFF_CHECK(num_freqs >= 0, "positional_encoding: num_freqs must be non-negative");
    std::vector<double> out(
        static_cast<std::size_t>(encoded_size(static_cast<int>(v.size()), num_freqs, prepend_input)));
    encode_into(v, num_freqs, prepend_input, out.data());
    return out;
}

template <typename T>
void FieldBatch<T>::forward(const FieldParams<T>& params, std::span<const Vec3> points,
                            std::span<const Vec3> directions) {
    const FieldConfig& cfg = params.config;
    NERFDIFF_CHECK(!cfg.use_direction || directions.size() == points.size(),
                   "field: one direction per point is required when direction conditioning is on");
    const Camera& ref = params.reference;
    const std::size_t n = points.size();
    const int channels = cfg.channels;
    const int in_dim = cfg.input_dim();
    const double depth_scale = 2.0 / (ref.t_far - ref.t_near);

    inside_.assign(n, 0);
    active_.clear();
    corners_.clear();
    std::vector<Vec3> contracted;
    for (std::size_t s = 0; s < n; ++s) {
        const Vec3& p = points[s];
        const double depth = camera_depth(p);
        if (!(depth > ref.t_near && depth < ref.t_far)) continue;
        const Vec2 uv = project(p, ref.intrinsics);
        if (std::abs(uv.x()) > 1.0 || std::abs(uv.y()) > 1.0) continue;
        inside_[s] = 1;
        active_.push_back(static_cast<std::uint32_t>(s));
        contracted.emplace_back(uv.x(), uv.y(), (depth - ref.t_near) * depth_scale - 1.0);
    }

    const auto active = static_cast<Eigen::Index>(active_.size());
    input_.resize(in_dim, active);
    corners_.resize(active_.size());
    double encoded[64];
    const T* taps[12];
    for (Eigen::Index k = 0; k < active; ++k) {
        const Vec3& x = contracted[static_cast<std::size_t>(k)];
        Corners& cr = corners_[static_cast<std::size_t>(k)];
        T* col = input_.col(k).data();
        if (params.is_triplane()) {
            const auto& tp = params.triplane();
            bilinear_taps(tp.xy, x.y(), x.x(), &cr.offset[0], &cr.weight[0]);
            bilinear_taps(tp.xz, x.z(), x.x(), &cr.offset[4], &cr.weight[4]);
            bilinear_taps(tp.yz, x.z(), x.y(), &cr.offset[8], &cr.weight[8]);
            for (int t = 0; t < 4; ++t) {
                taps[t] = tp.xy.values.data() + cr.offset[t];
                taps[4 + t] = tp.xz.values.data() + cr.offset[4 + t];
                taps[8 + t] = tp.yz.values.data() + cr.offset[8 + t];
            }
            gather_taps<12>(taps, cr.weight.data(), channels, col);
        } else {
            const auto& img = params.pixel_features();
            bilinear_taps(img, x.y(), x.x(), &cr.offset[0], &cr.weight[0]);
            for (int t = 0; t < 4; ++t) taps[t] = img.values.data() + cr.offset[t];
            gather_taps<4>(taps, cr.weight.data(), channels, col);
        }
        int at = channels;
        if (cfg.use_direction) {
            const Vec3& d = directions[active_[static_cast<std::size_t>(k)]];
            const double dv[3] = {d.x(), d.y(), d.z()};
            const int len = encoded_size(3, cfg.direction_freqs, true);
            NERFDIFF_CHECK(len <= 64, "direction encoding too large");
            encode_into(dv, cfg.direction_freqs, true, encoded);
            for (int e = 0; e < len; ++e) col[at + e] = static_cast<T>(encoded[e]);
            at += len;
        }
        if (cfg.use_posenc) {
            const double xv[3] = {x.x(), x.y(), x.z()};
            const int len = encoded_size(3, cfg.position_freqs, true);
            NERFDIFF_CHECK(len <= 64, "position encoding too large");
            encode_into(xv, cfg.position_freqs, true, encoded);
            for (int e = 0; e < len; ++e) col[at + e] = static_cast<T>(encoded[e]);
        }
    }

    rgb_.setZero(3, static_cast<Eigen::Index>(n));
    density_.assign(n, T(0));
    if (active == 0) return;
    mlp_forward(params.mlp, input_, raw_, cache_);
    for (Eigen::Index k = 0; k < active; ++k) {
        const auto s = static_cast<Eigen::Index>(active_[static_cast<std::size_t>(k)]);
        for (int c = 0; c < 3; ++c) rgb_(c, s) = sigmoid(raw_(c, k));
        density_[static_cast<std::size_t>(s)] = softplus(raw_(3, k));
    }
}

template <typename T>
T FieldBatch<T>::min_hidden_margin() const {
    T margin = std::numeric_limits<T>::infinity();
    for (const auto& pre : cache_.pre_activations)
        if (pre.size() > 0) margin = std::min(margin, pre.cwiseAbs().minCoeff());
    return margin;
}

template <typename T>
void FieldBatch<T>::backward(const FieldParams<T>& params, std::span<const T> d_rgb, std::span<const T> d_density,
                             FieldParams<T>& grads) {
    NERFDIFF_CHECK(d_rgb.size() == 3 * size() && d_density.size() == size(), "field backward: gradient size mismatch");
    const auto active = static_cast<Eigen::Index>(active_.size());
    if (active == 0) return;
    d_raw_.resize(4, active);
    for (Eigen::Index k = 0; k < active; ++k) {
        const auto s = static_cast<std::size_t>(active_[static_cast<std::size_t>(k)]);
        for (int c = 0; c < 3; ++c) {
            const T v = rgb_(c, static_cast<Eigen::Index>(s));
            d_raw_(c, k) = d_rgb[3 * s + c] * v * (T(1) - v);
        }
        d_raw_(3, k) = d_density[s] * sigmoid(raw_(3, k));
    }
    mlp_backward(params.mlp, cache_, d_raw_, grads.mlp, &d_input_);
    for (Eigen::Index k = 0; k < active; ++k) {
        const Corners& cr = corners_[static_cast<std::size_t>(k)];
        const T* g = d_input_.col(k).data();
        if (grads.is_triplane()) {
            auto& tp = grads.triplane();
            scatter_taps(tp.xy, &cr.offset[0], &cr.weight[0], g);
            scatter_taps(tp.xz, &cr.offset[4], &cr.weight[4], g);
            scatter_taps(tp.yz, &cr.offset[8], &cr.weight[8], g);
        } else {
            scatter_taps(grads.pixel_features(), &cr.offset[0], &cr.weight[0], g);
        }
    }
}

template <typename T>
FieldSample<T> field_eval(const FieldParams<T>& params, const Vec3& point_camera, const Vec3& direction_camera) {
    NERFDIFF_CHECK(params.all_finite(), "field_eval: parameters are not finite");
    FieldBatch<T> batch;
    batch.forward(params, std::span<const Vec3>(&point_camera, 1), std::span<const Vec3>(&direction_camera, 1));
    return {{batch.rgb(0, 0), batch.rgb(0, 1), batch.rgb(0, 2)}, batch.density(0)};
}

template <typename T>
void field_eval_backward(const FieldParams<T>& params, const Vec3& point_camera, const Vec3& direction_camera,
                         const std::array<T, 4>& upstream, FieldParams<T>& grads) {
    FieldBatch<T> batch;
    batch.forward(params, std::span<const Vec3>(&point_camera, 1), std::span<const Vec3>(&direction_camera, 1));
    batch.backward(params, std::span<const T>(upstream.data(), 3), std::span<const T>(upstream.data() + 3, 1), grads);
}

#define NERFDIFF_INSTANTIATE_FIELD(T)                                                                                  \
    template struct FeatureGrid<T>;                                                                                    \
    template struct Triplane<T>;                                                                                       \
    template struct FieldParams<T>;                                                                                    \
    template class FieldBatch<T>;                                                                                      \
    template FieldParams<T> make_field<T>(const FieldConfig&, const Camera&, std::uint64_t);                           \
    template std::vector<ParamView<T>> parameter_views<T>(FieldParams<T>&);                                            \
    template std::vector<ParamView<const T>> parameter_views<T>(const FieldParams<T>&);                                \
    template std::vector<T> triplane_query<T>(const Triplane<T>&, const Vec3&);                                        \
    template std::vector<T> pixel_query<T>(const PixelFeatureImage<T>&, const Vec3&, const Intrinsics&);               \
    template FieldSample<T> field_eval<T>(const FieldParams<T>&, const Vec3&, const Vec3&);                            \
    template void field_eval_backward<T>(const FieldParams<T>&, const Vec3&, const Vec3&, const std::array<T, 4>&,     \
                                         FieldParams<T>&);

NERFDIFF_INSTANTIATE_FIELD(float)
NERFDIFF_INSTANTIATE_FIELD(double)

} // namespace nerfdiff

// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/renderer.hpp"

#include "nerfdiff/error.hpp"
#include "nerfdiff/parallel.hpp"
#include "nerfdiff/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nerfdiff {

std::vector<double> sample_stratified(double t_near, double t_far, int n, std::uint64_t seed, bool jitter) {
    NERFDIFF_CHECK(n >= 1, "sample_stratified: need at least one sample");
    NERFDIFF_CHECK(t_near < t_far, "sample_stratified: empty interval");
    std::vector<double> t(static_cast<std::size_t>(n));
    const double width = (t_far - t_near) / n;
    SplitMix rng(seed);
    for (int k = 0; k < n; ++k) {
        const double u = jitter ? rng.uniform() : 0.5;
        t[static_cast<std::size_t>(k)] = t_near + (k + u) * width;
    }
    return t;
}

std::vector<double> sample_importance(std::span<const double> coarse_t, std::span<const double> weights, double t_near,
                                      double t_far, int n, std::uint64_t seed, bool jitter) {
    const std::size_t m = coarse_t.size();
    NERFDIFF_CHECK(m >= 1 && weights.size() == m, "sample_importance: one weight per coarse sample is required");
    NERFDIFF_CHECK(n >= 0, "sample_importance: negative sample count");
    std::vector<double> edges(m + 1);
    edges[0] = t_near;
    edges[m] = t_far;
    for (std::size_t k = 1; k < m; ++k) edges[k] = 0.5 * (coarse_t[k - 1] + coarse_t[k]);

    double total = 0.0;
    for (double w : weights) {
        NERFDIFF_CHECK(w >= 0.0 && std::isfinite(w), "sample_importance: weights must be finite and non-negative");
        total += w;
    }
    std::vector<double> cdf(m + 1, 0.0);
    const double floor = 0.01 * total / static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
        const double mass = total > 0.0 ? weights[k] + floor : edges[k + 1] - edges[k];
        cdf[k + 1] = cdf[k] + mass;
    }
    const double norm = cdf[m];

    std::vector<double> out(static_cast<std::size_t>(n));
    SplitMix rng(seed);
    std::size_t bin = 0;
    for (int s = 0; s < n; ++s) {
        const double u = (s + (jitter ? rng.uniform() : 0.5)) / n * norm;
        while (bin + 1 < m && cdf[bin + 1] <= u) ++bin;
        const double mass = cdf[bin + 1] - cdf[bin];
        const double frac = mass > 0.0 ? std::clamp((u - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
        out[static_cast<std::size_t>(s)] = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
    }
    return out;
}

namespace {

// Forward compositing of n samples. Writes per-sample weights and returns the
// final transmittance.
template <typename T>
T composite_core(std::size_t n, const double* t, double t_far, const T* rgb, const T* density, T* weights, T* out_rgb,
                 T& opacity, T& depth) {
    T trans = T(1);
    out_rgb[0] = out_rgb[1] = out_rgb[2] = T(0);
    opacity = T(0);
    depth = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T delta = static_cast<T>((i + 1 < n ? t[i + 1] : t_far) - t[i]);
        const T next = trans * std::exp(-density[i] * delta);
        const T w = trans - next;
        weights[i] = w;
        out_rgb[0] += w * rgb[3 * i];
        out_rgb[1] += w * rgb[3 * i + 1];
        out_rgb[2] += w * rgb[3 * i + 2];
        opacity += w;
        depth += w * static_cast<T>(t[i]);
        trans = next;
    }
    return trans;
}

// d<g, rgb>/d(c_i) = w_i g and
// d<g, rgb>/d(sigma_k) = delta_k (T_{k+1} <g, c_k> - sum_{i>k} w_i <g, c_i> - T_final <g, bg>).
template <typename T>
void composite_grad(std::size_t n, const double* t, double t_far, const T* rgb, const T* weights, T final_trans,
                    const T* bg, const T* g, T* d_rgb, T* d_density) {
    T suffix = final_trans * (g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2]);
    T trans_after = final_trans;
    for (std::size_t i = n; i-- > 0;) {
        const T gc = g[0] * rgb[3 * i] + g[1] * rgb[3 * i + 1] + g[2] * rgb[3 * i + 2];
        const T delta = static_cast<T>((i + 1 < n ? t[i + 1] : t_far) - t[i]);
        d_rgb[3 * i] = weights[i] * g[0];
        d_rgb[3 * i + 1] = weights[i] * g[1];
        d_rgb[3 * i + 2] = weights[i] * g[2];
        d_density[i] = delta * (trans_after * gc - suffix);
        suffix += weights[i] * gc;
        trans_after += weights[i];
    }
}

void check_samples(std::span<const double> t, double t_far, std::span<const double> rgb,
                   std::span<const double> density) {
    NERFDIFF_CHECK(rgb.size() == 3 * t.size() && density.size() == t.size(), "composite: sample arrays disagree");
    for (std::size_t i = 0; i < t.size(); ++i) {
        NERFDIFF_CHECK(std::isfinite(density[i]) && density[i] >= 0.0,
                       "composite: densities must be finite and non-negative");
        NERFDIFF_CHECK((i + 1 < t.size() ? t[i + 1] : t_far) >= t[i], "composite: distances must ascend");
    }
}

} // namespace

CompositeResult composite(std::span<const double> t, double t_far, std::span<const double> rgb,
                          std::span<const double> density, const Vec3& background) {
    check_samples(t, t_far, rgb, density);
    CompositeResult res;
    res.weights.resize(t.size());
    double out[3];
    const double trans = composite_core(t.size(), t.data(), t_far, rgb.data(), density.data(), res.weights.data(), out,
                                        res.opacity, res.depth);
    res.rgb = Vec3(out[0], out[1], out[2]) + trans * background;
    return res;
}

void composite_backward(std::span<const double> t, double t_far, std::span<const double> rgb,
                        std::span<const double> density, const Vec3& background, const Vec3& upstream,
                        std::span<double> d_rgb, std::span<double> d_density) {
    check_samples(t, t_far, rgb, density);
    NERFDIFF_CHECK(d_rgb.size() == rgb.size() && d_density.size() == density.size(),
                   "composite_backward: output arrays have the wrong size");
    std::vector<double> weights(t.size());
    double out[3];
    double opacity = 0.0;
    double depth = 0.0;
    const double trans =
        composite_core(t.size(), t.data(), t_far, rgb.data(), density.data(), weights.data(), out, opacity, depth);
    composite_grad(t.size(), t.data(), t_far, rgb.data(), weights.data(), trans, background.data(), upstream.data(),
                   d_rgb.data(), d_density.data());
}

namespace {

// Renders a contiguous range of rays with all per-sample state retained for
// the backward pass. One instance per worker; buffers are reused across chunks.
template <typename T>
class ChunkRenderer {
public:
    ChunkRenderer(const FieldParams<T>& params, const RenderConfig& cfg) : params_(params), cfg_(cfg) {
        NERFDIFF_CHECK(cfg.coarse_samples >= 1 && cfg.fine_samples >= 0, "render: invalid sample counts");
        for (int c = 0; c < 3; ++c) bg_[c] = static_cast<T>(cfg.background[c]);
    }

    void forward(std::span<const Ray> rays, std::span<const std::uint64_t> seeds) {
        const std::size_t n_rays = rays.size();
        const auto nc = static_cast<std::size_t>(cfg_.coarse_samples);
        const auto nf = static_cast<std::size_t>(cfg_.fine_samples);
        const Pose& ref = params_.reference.pose;
        const std::size_t total = nc + nf;

        local_.resize(n_rays);
        t_.assign(n_rays * total, 0.0);
        source_.assign(n_rays * total, 0);
        points_.resize(n_rays * nc);
        dirs_.resize(n_rays * nc);
        for (std::size_t r = 0; r < n_rays; ++r) {
            const Ray& ray = rays[r];
            Ray& loc = local_[r];
            loc.origin = ref.inverse_apply(ray.origin);
            loc.direction = ref.rotation.transpose() * ray.direction;
            loc.t_near = ray.t_near;
            loc.t_far = ray.t_far;
            const auto ts =
                sample_stratified(loc.t_near, loc.t_far, cfg_.coarse_samples, derive_seed(seeds[r], 1), cfg_.jitter);
            for (std::size_t k = 0; k < nc; ++k) {
                t_[r * total + k] = ts[k];
                points_[r * nc + k] = loc.at(ts[k]);
                dirs_[r * nc + k] = loc.direction;
            }
        }
        coarse_.forward(params_, points_, dirs_);

        if (nf > 0) {
            std::vector<T> rgb(3 * nc), dens(nc), w(nc);
            std::vector<double> wd(nc);
            T out[3], opacity, depth;
            fine_points_.resize(n_rays * nf);
            fine_dirs_.resize(n_rays * nf);
            for (std::size_t r = 0; r < n_rays; ++r) {
                for (std::size_t k = 0; k < nc; ++k) {
                    const std::size_t s = r * nc + k;
                    for (int c = 0; c < 3; ++c) rgb[3 * k + c] = coarse_.rgb(s, c);
                    dens[k] = coarse_.density(s);
                }
                composite_core(nc, &t_[r * total], local_[r].t_far, rgb.data(), dens.data(), w.data(), out, opacity,
                               depth);
                for (std::size_t k = 0; k < nc; ++k) wd[k] = static_cast<double>(w[k]);
                const auto tf =
                    sample_importance(std::span<const double>(&t_[r * total], nc), wd, local_[r].t_near,
                                      local_[r].t_far, cfg_.fine_samples, derive_seed(seeds[r], 2), cfg_.jitter);
                for (std::size_t k = 0; k < nf; ++k) {
                    t_[r * total + nc + k] = tf[k];
                    fine_points_[r * nf + k] = local_[r].at(tf[k]);
                    fine_dirs_[r * nf + k] = local_[r].direction;
                }
            }
            fine_.forward(params_, fine_points_, fine_dirs_);
        }

        // Merge coarse and fine samples per ray; source_ holds the batch index,
        // offset by n_rays * nc for fine samples.
        const std::size_t fine_base = n_rays * nc;
        sample_rgb_.resize(3 * n_rays * total);
        sample_density_.resize(n_rays * total);
        weights_.resize(n_rays * total);
        final_trans_.resize(n_rays);
        rgb_.resize(3 * n_rays);
        opacity_.resize(n_rays);
        depth_.resize(n_rays);
        std::vector<std::uint32_t> ids(total), order(total);
        std::iota(ids.begin(), ids.end(), 0u);
        std::vector<double> sorted_t(total);
        for (std::size_t r = 0; r < n_rays; ++r) {
            double* tr = &t_[r * total];
            // Both passes are ascending, so a stable merge orders the union.
            std::merge(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nc),
                       ids.begin() + static_cast<std::ptrdiff_t>(nc), ids.end(), order.begin(),
                       [&](std::uint32_t a, std::uint32_t b) { return tr[a] < tr[b]; });
            for (std::size_t k = 0; k < total; ++k) {
                const std::uint32_t o = order[k];
                sorted_t[k] = tr[o];
                const std::size_t src = o < nc ? r * nc + o : fine_base + r * nf + (o - nc);
                source_[r * total + k] = static_cast<std::uint32_t>(src);
                const FieldBatch<T>& batch = src < fine_base ? coarse_ : fine_;
                const std::size_t idx = src < fine_base ? src : src - fine_base;
                for (int c = 0; c < 3; ++c) sample_rgb_[3 * (r * total + k) + c] = batch.rgb(idx, c);
                sample_density_[r * total + k] = batch.density(idx);
            }
            std::copy(sorted_t.begin(), sorted_t.end(), tr);
            T out[3];
            final_trans_[r] =
                composite_core(total, tr, local_[r].t_far, &sample_rgb_[3 * r * total], &sample_density_[r * total],
                               &weights_[r * total], out, opacity_[r], depth_[r]);
            for (int c = 0; c < 3; ++c) rgb_[3 * r + c] = out[c] + final_trans_[r] * bg_[c];
        }
    }

    void backward(std::span<const T> d_rgb_rays, FieldParams<T>& grads) {
        const std::size_t n_rays = local_.size();
        const auto nc = static_cast<std::size_t>(cfg_.coarse_samples);
        const auto nf = static_cast<std::size_t>(cfg_.fine_samples);
        const std::size_t total = nc + nf;
        const std::size_t fine_base = n_rays * nc;
        d_coarse_rgb_.assign(3 * n_rays * nc, T(0));
        d_coarse_density_.assign(n_rays * nc, T(0));
        d_fine_rgb_.assign(3 * n_rays * nf, T(0));
        d_fine_density_.assign(n_rays * nf, T(0));
        std::vector<T> d_rgb(3 * total), d_density(total);
        for (std::size_t r = 0; r < n_rays; ++r) {
            composite_grad(total, &t_[r * total], local_[r].t_far, &sample_rgb_[3 * r * total], &weights_[r * total],
                           final_trans_[r], bg_, &d_rgb_rays[3 * r], d_rgb.data(), d_density.data());
            for (std::size_t k = 0; k < total; ++k) {
                const std::size_t src = source_[r * total + k];
                T* dst_rgb = src < fine_base ? &d_coarse_rgb_[3 * src] : &d_fine_rgb_[3 * (src - fine_base)];
                T& dst_density = src < fine_base ? d_coarse_density_[src] : d_fine_density_[src - fine_base];
                for (int c = 0; c < 3; ++c) dst_rgb[c] = d_rgb[3 * k + c];
                dst_density = d_density[k];
            }
        }
        coarse_.backward(params_, d_coarse_rgb_, d_coarse_density_, grads);
        if (nf > 0) fine_.backward(params_, d_fine_rgb_, d_fine_density_, grads);
    }

    std::span<const T> rgb() const { return rgb_; }
    std::span<const T> opacity() const { return opacity_; }
    std::span<const T> depth() const { return depth_; }

private:
    const FieldParams<T>& params_;
    const RenderConfig& cfg_;
    T bg_[3];
    std::vector<Ray> local_;
    std::vector<double> t_;
    std::vector<std::uint32_t> source_;
    std::vector<Vec3> points_, dirs_, fine_points_, fine_dirs_;
    FieldBatch<T> coarse_, fine_;
    std::vector<T> sample_rgb_, sample_density_, weights_, final_trans_;
    std::vector<T> rgb_, opacity_, depth_;
    std::vector<T> d_coarse_rgb_, d_coarse_density_, d_fine_rgb_, d_fine_density_;
};

template <typename T>
void add_into(FieldParams<T>& dst, const FieldParams<T>& src) {
    auto d = parameter_views(dst);
    auto s = parameter_views(src);
    for (std::size_t k = 0; k < d.size(); ++k)
        for (std::size_t i = 0; i < d[k].values.size(); ++i) d[k].values[i] += s[k].values[i];
}

template <typename T>
void run_chunks(const FieldParams<T>& params, std::span<const Ray> rays, std::span<const std::uint64_t> seeds,
                const RenderConfig& cfg, const UpstreamFn<T>* upstream, FieldParams<T>* grads,
                RayRenderOutput<T>* out) {
    NERFDIFF_CHECK(seeds.size() == rays.size(), "render: one seed per ray is required");
    NERFDIFF_CHECK(cfg.chunk_rays >= 1, "render: chunk size must be positive");
    const std::size_t n = rays.size();
    if (out) {
        out->rgb.assign(3 * n, T(0));
        out->opacity.assign(n, T(0));
        out->depth.assign(n, T(0));
    }
    const auto chunk = static_cast<std::size_t>(cfg.chunk_rays);
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    const int workers =
        static_cast<int>(std::min<std::size_t>(std::max(cfg.threads, 1), std::max<std::size_t>(n_chunks, 1)));
    std::vector<FieldParams<T>> local_grads;
    if (grads && workers > 1)
        for (int w = 0; w < workers; ++w) local_grads.push_back(params.zeros_like());

    parallel_ranges(n_chunks, workers, [&](int worker, std::size_t begin, std::size_t end) {
        ChunkRenderer<T> renderer(params, cfg);
        std::vector<T> d_rgb;
        FieldParams<T>* g = grads;
        if (grads && workers > 1) g = &local_grads[static_cast<std::size_t>(worker)];
        for (std::size_t c = begin; c < end; ++c) {
            const std::size_t first = c * chunk;
            const std::size_t count = std::min(chunk, n - first);
            renderer.forward(rays.subspan(first, count), seeds.subspan(first, count));
            if (out) {
                std::copy(renderer.rgb().begin(), renderer.rgb().end(), out->rgb.begin() + 3 * first);
                std::copy(renderer.opacity().begin(), renderer.opacity().end(), out->opacity.begin() + first);
                std::copy(renderer.depth().begin(), renderer.depth().end(), out->depth.begin() + first);
            }
            if (upstream) {
                d_rgb.assign(3 * count, T(0));
                (*upstream)(first, renderer.rgb(), d_rgb);
                renderer.backward(d_rgb, *g);
            }
        }
    });
    for (const auto& g : local_grads) add_into(*grads, g);
}

} // namespace

template <typename T>
void render_rays(const FieldParams<T>& params, std::span<const Ray> rays, std::span<const std::uint64_t> seeds,
                 const RenderConfig& cfg, RayRenderOutput<T>& out) {
    run_chunks<T>(params, rays, seeds, cfg, nullptr, nullptr, &out);
}

template <typename T>
void render_rays_backward(const FieldParams<T>& params, std::span<const Ray> rays, std::span<const std::uint64_t> seeds,
                          const RenderConfig& cfg, const UpstreamFn<T>& upstream, FieldParams<T>& grads,
                          RayRenderOutput<T>* out) {
    run_chunks<T>(params, rays, seeds, cfg, &upstream, &grads, out);
}

template <typename T>
CompositeResult render_pixel(const FieldParams<T>& params, const Ray& ray, const RenderConfig& cfg,
                             std::uint64_t seed) {
    ChunkRenderer<T> renderer(params, cfg);
    renderer.forward(std::span<const Ray>(&ray, 1), std::span<const std::uint64_t>(&seed, 1));
    CompositeResult res;
    res.rgb = Vec3(renderer.rgb()[0], renderer.rgb()[1], renderer.rgb()[2]);
    res.opacity = renderer.opacity()[0];
    res.depth = renderer.depth()[0];
    return res;
}

std::vector<std::uint64_t> pixel_seeds(const Camera& camera, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(camera.intrinsics.width) * camera.intrinsics.height;
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t k = 0; k < n; ++k) seeds[k] = derive_seed(seed, k);
    return seeds;
}

template <typename T>
RenderedImage render_image(const FieldParams<T>& params, const Camera& camera, const RenderConfig& cfg,
                           std::uint64_t seed) {
    const auto rays = generate_rays(camera);
    const auto seeds = pixel_seeds(camera, seed);
    RayRenderOutput<T> out;
    render_rays(params, std::span<const Ray>(rays), seeds, cfg, out);
    const int h = camera.intrinsics.height;
    const int w = camera.intrinsics.width;
    RenderedImage img{Image(h, w, 3), Image(h, w, 1), Image(h, w, 1)};
    for (std::size_t k = 0; k < rays.size(); ++k) {
        for (int c = 0; c < 3; ++c) img.rgb.pixels[3 * k + c] = static_cast<double>(out.rgb[3 * k + c]);
        img.opacity.pixels[k] = static_cast<double>(out.opacity[k]);
        img.depth.pixels[k] = static_cast<double>(out.depth[k]);
    }
    return img;
}

template <typename T>
void render_backward(const FieldParams<T>& params, const Ray& ray, const RenderConfig& cfg, std::uint64_t seed,
                     const Vec3& upstream, FieldParams<T>& grads) {
    ChunkRenderer<T> renderer(params, cfg);
    renderer.forward(std::span<const Ray>(&ray, 1), std::span<const std::uint64_t>(&seed, 1));
    const T g[3] = {static_cast<T>(upstream.x()), static_cast<T>(upstream.y()), static_cast<T>(upstream.z())};
    renderer.backward(std::span<const T>(g, 3), grads);
}

template <typename T>
CompositeResult render_ray_fixed(const FieldParams<T>& params, const Ray& ray, std::span<const double> t,
                                 const Vec3& background) {
    const Pose& ref = params.reference.pose;
    Ray loc = ray;
    loc.origin = ref.inverse_apply(ray.origin);
    loc.direction = ref.rotation.transpose() * ray.direction;
    std::vector<Vec3> points, dirs(t.size(), loc.direction);
    for (double ti : t) points.push_back(loc.at(ti));
    FieldBatch<T> batch;
    batch.forward(params, points, dirs);
    std::vector<double> rgb(3 * t.size()), density(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) {
        for (int c = 0; c < 3; ++c) rgb[3 * k + c] = static_cast<double>(batch.rgb(k, c));
        density[k] = static_cast<double>(batch.density(k));
    }
    return composite(t, ray.t_far, rgb, density, background);
}

#define NERFDIFF_INSTANTIATE_RENDER(T)                                                                                 \
    template void render_rays<T>(const FieldParams<T>&, std::span<const Ray>, std::span<const std::uint64_t>,          \
                                 const RenderConfig&, RayRenderOutput<T>&);                                            \
    template void render_rays_backward<T>(const FieldParams<T>&, std::span<const Ray>, std::span<const std::uint64_t>, \
                                          const RenderConfig&, const UpstreamFn<T>&, FieldParams<T>&,                  \
                                          RayRenderOutput<T>*);                                                        \
    template CompositeResult render_pixel<T>(const FieldParams<T>&, const Ray&, const RenderConfig&, std::uint64_t);   \
    template RenderedImage render_image<T>(const FieldParams<T>&, const Camera&, const RenderConfig&, std::uint64_t);  \
    template void render_backward<T>(const FieldParams<T>&, const Ray&, const RenderConfig&, std::uint64_t,            \
                                     const Vec3&, FieldParams<T>&);                                                    \
    template CompositeResult render_ray_fixed<T>(const FieldParams<T>&, const Ray&, std::span<const double>,           \
                                                 const Vec3&);

NERFDIFF_INSTANTIATE_RENDER(float)
NERFDIFF_INSTANTIATE_RENDER(double)

} // namespace nerfdiff

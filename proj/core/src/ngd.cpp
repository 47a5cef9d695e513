// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/ngd.hpp"

#include "nerfdiff/error.hpp"
#include "nerfdiff/metrics.hpp"
#include "nerfdiff/parallel.hpp"
#include "nerfdiff/random.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace nerfdiff {

namespace {

constexpr std::uint64_t kNoiseTag = 0x7a31;
constexpr std::uint64_t kRenderTag = 0x72656e;
constexpr std::uint64_t kRerenderTag = 0x726532;
constexpr std::uint64_t kFitTag = 0x6e6764;
constexpr std::uint64_t kSdsTag = 0x736473;

FitConfig fit_config(const GuidanceConfig& cfg) {
    FitConfig fit;
    fit.batch_rays = cfg.batch_rays;
    fit.lr_mlp = cfg.lr_mlp;
    fit.lr_triplane = cfg.lr_triplane;
    fit.clip_norm = cfg.clip_norm;
    fit.render = cfg.train_render;
    fit.render.threads = cfg.threads;
    return fit;
}

RenderConfig guidance_render(const GuidanceConfig& cfg) {
    RenderConfig r = cfg.guidance_render;
    r.threads = cfg.threads;
    return r;
}

void check_views(std::span<const Camera> views, const GuidanceConfig& cfg) {
    NERFDIFF_CHECK(!views.empty(), "guidance: need at least one virtual view");
    NERFDIFF_CHECK(cfg.ddim_steps >= 1, "guidance: ddim_steps must be at least 1");
    NERFDIFF_CHECK(cfg.nerf_steps >= 0, "guidance: negative nerf_steps");
    NERFDIFF_CHECK(cfg.batch_rays >= 1, "guidance: batch_rays must be positive");
    for (const auto& v : views)
        NERFDIFF_CHECK(v.intrinsics.width == views[0].intrinsics.width &&
                           v.intrinsics.height == views[0].intrinsics.height,
                       "guidance: virtual views must share one resolution");
}

/// Ray pool of the virtual views followed by the input view.
struct Pool {
    std::vector<std::vector<Ray>> view_rays;
    std::vector<Ray> input_rays;
    std::vector<float> input_targets;

    Pool(std::span<const Camera> views, const PosedImage* input) {
        for (const auto& v : views) view_rays.push_back(generate_rays(v));
        if (input) make_ray_pool(std::span<const PosedImage>(input, 1), input_rays, input_targets);
    }

    std::vector<Ray> all_rays() const {
        std::vector<Ray> out;
        for (const auto& r : view_rays) out.insert(out.end(), r.begin(), r.end());
        out.insert(out.end(), input_rays.begin(), input_rays.end());
        return out;
    }

    std::vector<float> targets(const std::vector<Image>& images) const {
        std::vector<float> out;
        for (const auto& im : images)
            for (double v : im.pixels) out.push_back(static_cast<float>(v));
        out.insert(out.end(), input_targets.begin(), input_targets.end());
        return out;
    }
};

Image render_rgb(const FieldParams<float>& field, const Camera& camera, const RenderConfig& cfg, std::uint64_t seed) {
    return render_image<float>(field, camera, cfg, seed).rgb;
}

std::vector<Image> render_views(const FieldParams<float>& field, std::span<const Camera> views, const RenderConfig& cfg,
                                std::uint64_t seed, std::uint64_t tag, int step) {
    std::vector<Image> out;
    out.reserve(views.size());
    for (std::size_t k = 0; k < views.size(); ++k)
        out.push_back(render_rgb(field, views[k], cfg,
                                 derive_seed(seed, tag, static_cast<std::uint64_t>(step) * views.size() + k)));
    return out;
}

/// x0 - lambda (x0 - nerf)
Image blend_toward(const Image& x0, const Image& nerf, double lambda) {
    require_same_shape(x0, nerf, "guidance");
    Image out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] -= lambda * (x0.pixels[i] - nerf.pixels[i]);
    return out;
}

} // namespace

Image guided_eps(const Image& eps_hat, const Image& x0_hat, const Image& nerf, const NoiseSchedule& sched, double t,
                 double gamma) {
    require_same_shape(eps_hat, x0_hat, "guided_eps");
    require_same_shape(eps_hat, nerf, "guided_eps");
    const auto [alpha, sigma] = sched.alpha_sigma(t);
    if (alpha <= 0.0) throw Error("guided_eps: undefined at t = 1");
    const double scale = gamma * sigma / alpha;
    Image out = eps_hat;
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] += scale * (x0_hat.pixels[i] - nerf.pixels[i]);
    return out;
}

double guidance_gamma(const GuidanceConfig& cfg, const NoiseSchedule& sched, double t) {
    if (cfg.gamma_fn) return cfg.gamma_fn(t);
    return cfg.gamma_mode == GammaMode::snr ? sched.snr(t) : cfg.gamma;
}

double guidance_lambda(const GuidanceConfig& cfg, const NoiseSchedule& sched, double t) {
    const auto [alpha, sigma] = sched.alpha_sigma(t);
    if (!cfg.gamma_fn && cfg.gamma_mode == GammaMode::snr) return 1.0;
    const double gamma = guidance_gamma(cfg, sched, t);
    NERFDIFF_CHECK(gamma >= 0.0, "guidance: gamma must be non-negative");
    if (alpha <= 0.0) return gamma > 0.0 ? 1.0 : 0.0;
    return gamma * sigma * sigma / (alpha * alpha);
}

PriorSample sample_prior_spiral(int count, double radius, double turns, int stride) {
    NERFDIFF_CHECK(count >= 1 && stride >= 1, "spiral prior: count and stride must be positive");
    const auto points = archimedean_spiral(count * stride + 1, radius, turns);
    PriorSample out;
    for (int k = 0; k < count; ++k) {
        out.indices.push_back(k * stride);
        out.poses.push_back(look_at(points[static_cast<std::size_t>(k * stride)], Vec3::Zero(), Vec3::UnitZ()));
    }
    return out;
}

Vec3 estimate_origin_from_axes(std::span<const Ray> axes) {
    NERFDIFF_CHECK(axes.size() >= 2, "estimate_origin_from_axes: need at least two axes");
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (const auto& ax : axes) {
        const double n = ax.direction.norm();
        NERFDIFF_CHECK(n > 0.0 && std::isfinite(n), "estimate_origin_from_axes: degenerate axis direction");
        const Vec3 d = ax.direction / n;
        const Mat3 proj = Mat3::Identity() - d * d.transpose();
        a += proj;
        b += proj * ax.origin;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(a);
    const Vec3 ev = eig.eigenvalues();
    if (ev(0) <= 1e-10 * ev(2)) throw Error("estimate_origin_from_axes: axes are parallel");
    return a.colPivHouseholderQr().solve(b);
}

Vec3 estimate_up(std::span<const Vec3> centers, std::span<const Vec3> forwards) {
    NERFDIFF_CHECK(centers.size() >= 3, "estimate_up: need at least three centers");
    NERFDIFF_CHECK(forwards.size() == centers.size(), "estimate_up: one forward axis per center");
    Vec3 mean = Vec3::Zero();
    for (const auto& c : centers) mean += c;
    mean /= static_cast<double>(centers.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& c : centers) cov += (c - mean) * (c - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();
    if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) throw Error("estimate_up: camera centers are collinear");
    Vec3 up = eig.eigenvectors().col(0).normalized();
    double alignment = 0.0;
    for (const auto& f : forwards) alignment += up.dot(f.normalized());
    if (alignment > 0.0) up = -up;
    return up;
}

PriorSample sample_prior_circle(int count, const Vec3& origin, const Vec3& up, double radius, double height,
                                const Vec3& start) {
    NERFDIFF_CHECK(count >= 1, "circle prior: count must be positive");
    NERFDIFF_CHECK(radius > 0.0, "circle prior: radius must be positive");
    const double un = up.norm();
    NERFDIFF_CHECK(un > 0.0, "circle prior: zero up vector");
    const Vec3 u = up / un;
    Vec3 a = start - start.dot(u) * u;
    a = a.norm() > 1e-12 ? Vec3(a.normalized()) : Vec3(u.unitOrthogonal());
    const Vec3 b = u.cross(a);
    PriorSample out;
    const double two_pi = 6.283185307179586;
    for (int k = 0; k < count; ++k) {
        const double theta = two_pi * k / count;
        const Vec3 center = origin + height * u + radius * (std::cos(theta) * a + std::sin(theta) * b);
        out.indices.push_back(k);
        out.poses.push_back(look_at(center, origin, u));
    }
    return out;
}

PriorSample circle_prior_from_cameras(int count, std::span<const Pose> cameras) {
    NERFDIFF_CHECK(cameras.size() >= 3, "circle prior: need at least three cameras");
    std::vector<Ray> axes;
    std::vector<Vec3> centers;
    std::vector<Vec3> forwards;
    for (const auto& p : cameras) {
        axes.push_back({p.translation, p.forward(), 0.0, 1.0});
        centers.push_back(p.translation);
        forwards.push_back(p.forward());
    }
    const Vec3 origin = estimate_origin_from_axes(axes);
    const Vec3 up = estimate_up(centers, forwards);
    double height = 0.0;
    double dist = 0.0;
    for (const auto& c : centers) {
        height += (c - origin).dot(up);
        dist += (c - origin).norm();
    }
    height /= static_cast<double>(centers.size());
    dist /= static_cast<double>(centers.size());
    const double radius = std::sqrt(std::max(dist * dist - height * height, 0.0));
    return sample_prior_circle(count, origin, up, radius, height, centers.front() - origin);
}

std::vector<Camera> cameras_from_poses(std::span<const Pose> poses, const Camera& like) {
    std::vector<Camera> out;
    for (const auto& p : poses) {
        Camera c = like;
        c.pose = p;
        out.push_back(c);
    }
    return out;
}

NgdResult ngd_finetune(FieldParams<float>& field, const ViewModelFn& model, const PosedImage* input,
                       std::span<const Camera> views, const GuidanceConfig& cfg, std::uint64_t seed) {
    check_views(views, cfg);
    const NoiseSchedule sched;
    const std::size_t count = views.size();
    const int h = views[0].intrinsics.height;
    const int w = views[0].intrinsics.width;
    const RenderConfig grender = guidance_render(cfg);

    std::vector<Image> z;
    for (std::size_t k = 0; k < count; ++k) z.push_back(standard_normal(h, w, 3, derive_seed(seed, kNoiseTag, k)));

    const Pool pool(views, input);
    RayFitter<float> fitter(field, fit_config(cfg));
    if (cfg.nerf_steps > 0) fitter.set_pool(pool.all_rays(), pool.targets(z));

    const auto grid = ddim_grid(cfg.ddim_steps);
    NgdResult result;
    std::vector<ScorePrediction> preds(count);
    for (int i = 0; i < cfg.ddim_steps; ++i) {
        const double t = grid[static_cast<std::size_t>(i)];
        const double t_next = grid[static_cast<std::size_t>(i) + 1];
        const double lambda = guidance_lambda(cfg, sched, t);

        const auto renders = render_views(field, views, grender, seed, kRenderTag, i);
        parallel_ranges(count, cfg.threads, [&](int, std::size_t begin, std::size_t end) {
            for (std::size_t k = begin; k < end; ++k) preds[k] = model(k).predict(z[k], t, &renders[k]);
        });

        NgdDiagnostic diag;
        diag.outer_step = i;
        diag.t = t;
        std::vector<Image> targets;
        double sq = 0.0;
        std::size_t n = 0;
        for (std::size_t k = 0; k < count; ++k) {
            require_same_shape(preds[k].x0, z[k], "ngd: model output");
            targets.push_back(cfg.target == TargetMode::unguided ? preds[k].x0
                                                                 : blend_toward(preds[k].x0, renders[k], lambda));
            for (std::size_t p = 0; p < targets[k].size(); ++p) {
                const double d = targets[k].pixels[p] - renders[k].pixels[p];
                sq += d * d;
            }
            n += targets[k].size();
            diag.mean_view_psnr += psnr(preds[k].x0, renders[k]);
        }
        diag.eq8_loss = sq / static_cast<double>(n);
        diag.mean_view_psnr /= static_cast<double>(count);
        if (!std::isfinite(diag.eq8_loss))
            throw Error("ngd_finetune outer step " + std::to_string(i) + ": distillation loss is not finite");

        std::vector<Image> guide = renders;
        if (cfg.nerf_steps > 0) {
            fitter.set_targets(pool.targets(targets));
            double sum = 0.0;
            for (int s = 0; s < cfg.nerf_steps; ++s) {
                const auto step = static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(cfg.nerf_steps) +
                                  static_cast<std::uint64_t>(s);
                try {
                    sum += fitter.step(derive_seed(seed, kFitTag, step));
                } catch (const Error& e) {
                    throw Error("ngd_finetune outer step " + std::to_string(i) + ", nerf step " + std::to_string(s) +
                                ": " + e.what());
                }
            }
            diag.fit_loss = sum / cfg.nerf_steps;
            guide = render_views(field, views, grender, seed, kRerenderTag, i);
        }

        const auto [alpha, sigma] = sched.alpha_sigma(t);
        for (std::size_t k = 0; k < count; ++k) {
            // eps~ = eps + (lambda alpha / sigma)(I_t - I_nerf); finite at t = 1.
            const Image x0_guided = blend_toward(preds[k].x0, guide[k], lambda);
            Image eps_guided = preds[k].eps;
            const double scale = sigma > 0.0 ? lambda * alpha / sigma : 0.0;
            for (std::size_t p = 0; p < eps_guided.size(); ++p)
                eps_guided.pixels[p] += scale * (preds[k].x0.pixels[p] - guide[k].pixels[p]);
            z[k] = ddim_step_from(x0_guided, eps_guided, sched, t_next);
        }
        result.diagnostics.push_back(diag);
    }
    result.views = std::move(z);
    return result;
}

DistillResult direct_distill(FieldParams<float>& field, const ViewModelFn& model, const PosedImage* input,
                             std::span<const Camera> views, const GuidanceConfig& cfg, std::uint64_t seed) {
    check_views(views, cfg);
    const std::size_t count = views.size();
    const int h = views[0].intrinsics.height;
    const int w = views[0].intrinsics.width;
    const auto renders = render_views(field, views, guidance_render(cfg), seed, kRenderTag, 0);

    DistillResult result;
    result.samples.resize(count);
    parallel_ranges(count, cfg.threads, [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k)
            result.samples[k] =
                ddim_sample(model(k), &renders[k], h, w, 3, cfg.ddim_steps, derive_seed(seed, kNoiseTag, k));
    });

    const int steps = cfg.ddim_steps * cfg.nerf_steps;
    if (steps == 0) return result;
    const Pool pool(views, input);
    RayFitter<float> fitter(field, fit_config(cfg));
    fitter.set_pool(pool.all_rays(), pool.targets(result.samples));
    for (int s = 0; s < steps; ++s) {
        try {
            result.loss.push_back(fitter.step(derive_seed(seed, kFitTag, static_cast<std::uint64_t>(s))));
        } catch (const Error& e) {
            throw Error("direct_distill step " + std::to_string(s) + ": " + e.what());
        }
    }
    return result;
}

SdsResult sds_finetune(FieldParams<float>& field, const ViewModelFn& model, const PosedImage* input,
                       std::span<const Camera> views, const GuidanceConfig& cfg, const SdsConfig& sds,
                       std::uint64_t seed) {
    check_views(views, cfg);
    NERFDIFF_CHECK(sds.iterations >= 0 && sds.nerf_steps >= 0, "sds: negative iteration count");
    NERFDIFF_CHECK(0.0 <= sds.t_min && sds.t_min <= sds.t_max && sds.t_max < 1.0, "sds: need 0 <= t_min <= t_max < 1");
    const NoiseSchedule sched;
    const RenderConfig grender = guidance_render(cfg);
    const Pool pool(views, input);
    RayFitter<float> fitter(field, fit_config(cfg));
    SdsResult result;
    for (int it = 0; it < sds.iterations; ++it) {
        const auto iter = static_cast<std::uint64_t>(it);
        SplitMix rng(derive_seed(seed, kSdsTag, iter));
        const std::size_t k = static_cast<std::size_t>(rng() % views.size());
        const double t = sds.t_min + (sds.t_max - sds.t_min) * rng.uniform();
        const Image render = render_rgb(field, views[k], grender, derive_seed(seed, kRenderTag, iter));
        const Image eps = standard_normal(render.height, render.width, 3, derive_seed(seed, kNoiseTag, iter));
        const Image z = add_noise(render, eps, sched, t);
        const Image target = model(k).predict(z, t, &render).x0;
        if (sds.nerf_steps == 0) continue;

        std::vector<Ray> rays = pool.view_rays[k];
        rays.insert(rays.end(), pool.input_rays.begin(), pool.input_rays.end());
        std::vector<float> targets;
        for (double v : target.pixels) targets.push_back(static_cast<float>(v));
        targets.insert(targets.end(), pool.input_targets.begin(), pool.input_targets.end());
        fitter.set_pool(std::move(rays), std::move(targets));
        for (int s = 0; s < sds.nerf_steps; ++s) {
            const auto step = iter * static_cast<std::uint64_t>(sds.nerf_steps) + static_cast<std::uint64_t>(s);
            try {
                result.loss.push_back(fitter.step(derive_seed(seed, kFitTag, step)));
            } catch (const Error& e) {
                throw Error("sds_finetune iteration " + std::to_string(it) + ": " + e.what());
            }
        }
    }
    return result;
}

void write_diagnostics_csv(const std::filesystem::path& path, const std::vector<NgdDiagnostic>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "outer_step,t,eq8_loss,mean_view_psnr\n";
    char line[160];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", r.outer_step, r.t, r.eq8_loss, r.mean_view_psnr);
        out << line;
    }
}

} // namespace nerfdiff

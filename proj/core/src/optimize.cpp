// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/optimize.hpp"

#include "nerfdiff/error.hpp"
#include "nerfdiff/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace nerfdiff {

template <typename T>
LossAndGrad<T> mse_ray_loss(std::span<const T> rendered, std::span<const T> target) {
    NERFDIFF_CHECK(rendered.size() == target.size(), "mse_ray_loss: batch shapes differ");
    NERFDIFF_CHECK(!rendered.empty(), "mse_ray_loss: empty batch");
    LossAndGrad<T> out;
    out.grad.resize(rendered.size());
    const double count = static_cast<double>(rendered.size());
    for (std::size_t k = 0; k < rendered.size(); ++k) {
        const double d = static_cast<double>(rendered[k]) - static_cast<double>(target[k]);
        out.loss += d * d;
        out.grad[k] = static_cast<T>(2.0 * d / count);
    }
    out.loss /= count;
    return out;
}

AdamConfig field_adam_config(double lr_mlp, double lr_triplane, double clip_norm) {
    AdamConfig cfg;
    cfg.group_lr = {{"mlp", lr_mlp}, {"triplane", lr_triplane}};
    cfg.default_lr = 0.0;
    cfg.clip_norm = clip_norm;
    return cfg;
}

template <typename T>
void make_ray_pool(std::span<const PosedImage> views, std::vector<Ray>& rays, std::vector<T>& targets) {
    rays.clear();
    targets.clear();
    for (const auto& v : views) {
        NERFDIFF_CHECK(v.image.height == v.camera.intrinsics.height && v.image.width == v.camera.intrinsics.width &&
                           v.image.channels == 3,
                       "ray pool: image does not match its camera");
        const auto r = generate_rays(v.camera);
        rays.insert(rays.end(), r.begin(), r.end());
        for (double p : v.image.pixels) targets.push_back(static_cast<T>(p));
    }
}

template <typename T>
RayFitter<T>::RayFitter(FieldParams<T>& params, const FitConfig& cfg)
    : params_(params), cfg_(cfg), adam_(field_adam_config(cfg.lr_mlp, cfg.lr_triplane, cfg.clip_norm)),
      grads_(params.zeros_like()) {
    NERFDIFF_CHECK(cfg.batch_rays >= 1, "fit: batch size must be positive");
}

template <typename T>
void RayFitter<T>::set_pool(std::vector<Ray> rays, std::vector<T> targets) {
    NERFDIFF_CHECK(targets.size() == 3 * rays.size(), "fit: three target values per ray");
    rays_ = std::move(rays);
    targets_ = std::move(targets);
}

template <typename T>
void RayFitter<T>::set_targets(std::vector<T> targets) {
    NERFDIFF_CHECK(targets.size() == 3 * rays_.size(), "fit: three target values per ray");
    targets_ = std::move(targets);
}

template <typename T>
double RayFitter<T>::batch_gradient(std::uint64_t step_seed, FieldParams<T>& grads) const {
    NERFDIFF_CHECK(!rays_.empty(), "fit: empty ray pool");
    const auto batch = static_cast<std::size_t>(cfg_.batch_rays);
    std::vector<Ray> rays(batch);
    std::vector<T> target(3 * batch);
    std::vector<std::uint64_t> seeds(batch);
    SplitMix pick(derive_seed(step_seed, 0));
    for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t idx = static_cast<std::size_t>(pick() % rays_.size());
        rays[k] = rays_[idx];
        for (int c = 0; c < 3; ++c) target[3 * k + c] = targets_[3 * idx + c];
        seeds[k] = derive_seed(step_seed, 1, k);
    }
    const double count = 3.0 * static_cast<double>(batch);
    std::vector<double> partial((batch + static_cast<std::size_t>(cfg_.render.chunk_rays) - 1) /
                                static_cast<std::size_t>(cfg_.render.chunk_rays));
    const UpstreamFn<T> upstream = [&](std::size_t first, std::span<const T> rgb, std::span<T> d_rgb) {
        double sum = 0.0;
        for (std::size_t k = 0; k < rgb.size(); ++k) {
            const double d = static_cast<double>(rgb[k]) - static_cast<double>(target[3 * first + k]);
            sum += d * d;
            d_rgb[k] = static_cast<T>(2.0 * d / count);
        }
        partial[first / static_cast<std::size_t>(cfg_.render.chunk_rays)] = sum;
    };
    render_rays_backward<T>(params_, rays, seeds, cfg_.render, upstream, grads);
    double loss = 0.0;
    for (double p : partial) loss += p;
    return loss / count;
}

template <typename T>
double RayFitter<T>::step(std::uint64_t step_seed) {
    zero_views(parameter_views(grads_));
    const double loss = batch_gradient(step_seed, grads_);
    if (!std::isfinite(loss)) throw Error("fit: loss is not finite");
    adam_.step(parameter_views(params_), parameter_views(static_cast<const FieldParams<T>&>(grads_)));
    if (!params_.all_finite()) throw Error("fit: parameters became non-finite");
    return loss;
}

template <typename T>
FitResult fit_scene(FieldParams<T>& params, std::span<const PosedImage> views, const FitConfig& cfg) {
    NERFDIFF_CHECK(!views.empty(), "fit_scene: need at least one view");
    NERFDIFF_CHECK(cfg.steps >= 0, "fit_scene: negative step count");
    FitResult result;
    if (cfg.steps == 0) return result;
    RayFitter<T> fitter(params, cfg);
    std::vector<Ray> rays;
    std::vector<T> targets;
    make_ray_pool(views, rays, targets);
    fitter.set_pool(std::move(rays), std::move(targets));
    for (int s = 0; s < cfg.steps; ++s) {
        try {
            result.loss.push_back(fitter.step(derive_seed(cfg.seed, static_cast<std::uint64_t>(s))));
        } catch (const Error& e) {
            throw Error("fit_scene step " + std::to_string(s) + ": " + e.what());
        }
    }
    return result;
}

namespace {

template <typename T>
void add_scaled(const std::vector<ParamView<T>>& dst, const std::vector<ParamView<const T>>& src, double scale) {
    const T s = static_cast<T>(scale);
    for (std::size_t k = 0; k < dst.size(); ++k)
        for (std::size_t i = 0; i < dst[k].values.size(); ++i) dst[k].values[i] += s * src[k].values[i];
}

std::vector<ParamView<double>> denoiser_views(Mlp<double>& mlp) {
    std::vector<ParamView<double>> v;
    append_mlp_views(mlp, "denoiser", "denoiser", v);
    return v;
}

} // namespace

JointStepLoss joint_gradients(const JointScene& scene, const TinyDenoiser& den, const JointConfig& cfg, int step,
                              FieldParams<float>& field_grads, Mlp<double>& den_grads) {
    NERFDIFF_CHECK(scene.views.size() >= 2, "train_joint: every scene needs at least two views");
    JointStepLoss out;
    out.step = step;
    const std::uint64_t step_seed = derive_seed(cfg.fit.seed, static_cast<std::uint64_t>(step));

    // Reconstruction term.
    {
        FieldParams<float> ic_grads = scene.field.zeros_like();
        auto& field = const_cast<FieldParams<float>&>(scene.field);
        RayFitter<float> fitter(field, cfg.fit);
        std::vector<Ray> rays;
        std::vector<float> targets;
        make_ray_pool(std::span<const PosedImage>(scene.views), rays, targets);
        fitter.set_pool(std::move(rays), std::move(targets));
        out.loss_ic = fitter.batch_gradient(step_seed, ic_grads);
        if (cfg.lambda_ic != 0.0)
            add_scaled(parameter_views(field_grads), parameter_views(static_cast<const FieldParams<float>&>(ic_grads)),
                       cfg.lambda_ic);
    }

    // Denoising term on a crop conditioned on the NeRF rendering.
    {
        SplitMix rng(derive_seed(cfg.fit.seed, static_cast<std::uint64_t>(step), 0x646d));
        const auto& view = scene.views[static_cast<std::size_t>(rng() % scene.views.size())];
        const int h = view.image.height;
        const int w = view.image.width;
        const int crop = std::min({cfg.crop, h, w});
        const int top = static_cast<int>(rng() % static_cast<std::uint64_t>(h - crop + 1));
        const int left = static_cast<int>(rng() % static_cast<std::uint64_t>(w - crop + 1));
        std::vector<Ray> rays;
        std::vector<std::uint64_t> seeds;
        DenoiserSample sample{Image(crop, crop, 3), Image(crop, crop, 3)};
        for (int r = 0; r < crop; ++r)
            for (int c = 0; c < crop; ++c) {
                rays.push_back(generate_ray(view.camera, left + c, top + r));
                seeds.push_back(derive_seed(step_seed, 2, static_cast<std::uint64_t>(r * crop + c)));
                for (int ch = 0; ch < 3; ++ch) sample.target.at(r, c, ch) = view.image.at(top + r, left + c, ch);
            }
        RayRenderOutput<float> rendered;
        render_rays<float>(scene.field, rays, seeds, cfg.fit.render, rendered);
        for (std::size_t k = 0; k < sample.cond.size(); ++k) sample.cond.pixels[k] = rendered.rgb[k];

        const auto draw = draw_noise(sample.target, derive_seed(step_seed, 3));
        Matrix<double> input, d_output, d_input;
        MlpCache<double> cache;
        out.loss_dm = denoiser_loss(den, sample, draw, &input, &cache, &d_output);
        if (cfg.lambda_dm != 0.0) {
            d_output *= cfg.lambda_dm;
            mlp_backward(den.mlp(), cache, d_output, den_grads, den.config().conditional ? &d_input : nullptr);
            if (den.config().conditional) {
                Image d_cond(crop, crop, 3);
                den.cond_gradient(d_input, draw.t, d_cond);
                const UpstreamFn<float> upstream = [&](std::size_t first, std::span<const float> rgb,
                                                       std::span<float> d_rgb) {
                    for (std::size_t k = 0; k < rgb.size(); ++k)
                        d_rgb[k] = static_cast<float>(d_cond.pixels[3 * first + k]);
                };
                render_rays_backward<float>(scene.field, rays, seeds, cfg.fit.render, upstream, field_grads);
            }
        }
    }
    out.total = cfg.lambda_ic * out.loss_ic + cfg.lambda_dm * out.loss_dm;
    return out;
}

JointResult train_joint(std::vector<JointScene>& scenes, TinyDenoiser& den, const JointConfig& cfg) {
    NERFDIFF_CHECK(!scenes.empty(), "train_joint: no scenes");
    for (const auto& s : scenes)
        NERFDIFF_CHECK(s.views.size() >= 2, "train_joint: every scene needs at least two views");
    NERFDIFF_CHECK(cfg.steps >= 0, "train_joint: negative step count");
    JointResult result;
    result.ema_denoiser = den;
    std::vector<Adam<float>> field_adam;
    std::vector<FieldParams<float>> field_grads;
    for (const auto& s : scenes) {
        field_adam.emplace_back(field_adam_config(cfg.fit.lr_mlp, cfg.fit.lr_triplane, cfg.fit.clip_norm));
        field_grads.push_back(s.field.zeros_like());
    }
    AdamConfig dcfg;
    dcfg.default_lr = cfg.lr_denoiser;
    dcfg.clip_norm = cfg.fit.clip_norm;
    Adam<double> den_adam(dcfg);
    Mlp<double> den_grads = den.mlp().zeros_like();
    const auto den_params = denoiser_views(den.mlp());
    const auto den_gviews = denoiser_views(den_grads);
    const auto ema_views = denoiser_views(result.ema_denoiser.mlp());

    for (int step = 0; step < cfg.steps; ++step) {
        const std::size_t si = static_cast<std::size_t>(step) % scenes.size();
        auto& scene = scenes[si];
        zero_views(parameter_views(field_grads[si]));
        zero_views(den_gviews);
        const auto loss = joint_gradients(scene, den, cfg, step, field_grads[si], den_grads);
        if (!std::isfinite(loss.total)) throw Error("train_joint: loss diverged at step " + std::to_string(step));
        field_adam[si].step(parameter_views(scene.field),
                            parameter_views(static_cast<const FieldParams<float>&>(field_grads[si])));
        den_adam.step(den_params, const_views(den_gviews));
        ema_update(ema_views, const_views(den_params), cfg.ema_decay);
        if (!scene.field.all_finite() || !den.mlp().all_finite())
            throw Error("train_joint: parameters became non-finite at step " + std::to_string(step));
        result.losses.push_back(loss);
    }
    return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<JointStepLoss>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "step,loss_ic,loss_dm,total\n";
    char line[128];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", r.step, r.loss_ic, r.loss_dm, r.total);
        out << line;
    }
}

template LossAndGrad<float> mse_ray_loss<float>(std::span<const float>, std::span<const float>);
template LossAndGrad<double> mse_ray_loss<double>(std::span<const double>, std::span<const double>);
template class RayFitter<float>;
template class RayFitter<double>;
template void make_ray_pool<float>(std::span<const PosedImage>, std::vector<Ray>&, std::vector<float>&);
template void make_ray_pool<double>(std::span<const PosedImage>, std::vector<Ray>&, std::vector<double>&);
template FitResult fit_scene<float>(FieldParams<float>&, std::span<const PosedImage>, const FitConfig&);
template FitResult fit_scene<double>(FieldParams<double>&, std::span<const PosedImage>, const FitConfig&);

} // namespace nerfdiff

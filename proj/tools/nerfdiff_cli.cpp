// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/checkpoint.hpp"
#include "nerfdiff/config.hpp"
#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/metrics.hpp"
#include "nerfdiff/ngd.hpp"
#include "nerfdiff/optimize.hpp"
#include "nerfdiff/random.hpp"
#include "nerfdiff/renderer.hpp"
#include "nerfdiff/scenes.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace nerfdiff;

namespace {

constexpr std::uint64_t kFieldInitTag = 0x6669;
constexpr std::uint64_t kOracleTag = 0x6f72;
constexpr std::uint64_t kRenderTag = 0x7265;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 0;
    std::string data;
    std::string field;
    std::string denoiser;
    std::optional<int> num;
    std::optional<int> views;
    std::optional<int> res;
    std::string renders;
    std::string truth;
};

struct Context {
    RunConfig cfg;
    std::uint64_t seed = 0;
    fs::path out;
    int threads = 1;
};

std::string view_file(std::size_t k, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03zu.%s", k, ext);
    return buf;
}

fs::path existing_path(const RunConfig& cfg, const std::string& key) {
    const auto value = cfg.get<std::string>(key, "");
    if (value.empty()) throw UsageError("missing required input '" + key + "'");
    if (!fs::exists(value)) throw UsageError("path for '" + key + "' does not exist: " + value);
    return value;
}

RenderConfig with_threads(RenderConfig rc, int threads) {
    rc.threads = threads;
    return rc;
}

RenderConfig output_render(const Context& ctx) {
    return with_threads(read_render_config(ctx.cfg, "render", RenderConfig{}), ctx.threads);
}

void write_loss_csv(const fs::path& path, const std::vector<double>& loss) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "step,loss\n";
    char line[64];
    for (std::size_t i = 0; i < loss.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.17g\n", i, loss[i]);
        out << line;
    }
}

void write_images(const fs::path& dir, const std::vector<Image>& images) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < images.size(); ++k) {
        write_float_image(dir / view_file(k, "f32"), images[k]);
        write_ppm(dir / view_file(k, "ppm"), images[k]);
    }
}

std::vector<Image> render_views(const FieldParams<float>& field, const std::vector<Camera>& cameras,
                                const RenderConfig& rc, std::uint64_t seed) {
    std::vector<Image> out;
    for (std::size_t k = 0; k < cameras.size(); ++k)
        out.push_back(render_image(field, cameras[k], rc, derive_seed(seed, kRenderTag, k)).rgb);
    return out;
}

void report_metrics(const fs::path& path, const std::vector<Image>& renders, const std::vector<Image>& truth) {
    const auto summary = cross_view_consistency(renders, truth);
    write_metrics_csv(path, summary.views);
    std::printf("mean psnr %.3f dB, min psnr %.3f dB (view %d), mean ssim %.4f\n", summary.mean_psnr, summary.min_psnr,
                summary.min_psnr_view, summary.mean_ssim);
}

FitConfig fit_config(const Context& ctx, std::uint64_t seed) {
    FitConfig fc = read_fit_config(ctx.cfg);
    fc.seed = seed;
    fc.render.threads = ctx.threads;
    return fc;
}

std::vector<PosedImage> posed_views(const SceneDataset& ds, const std::string& which) {
    std::vector<PosedImage> views;
    if (which == "all") {
        for (std::size_t k = 0; k < ds.cameras.size(); ++k) views.push_back({ds.cameras[k], ds.images[k]});
    } else if (which == "input") {
        views.push_back({ds.cameras.at(ds.input_index), ds.images.at(ds.input_index)});
    } else {
        throw Error("config: fit.views must be all or input");
    }
    return views;
}

// Field from paths.field, or a fresh field fitted to the dataset views.
FieldParams<float> initial_field(const Context& ctx, const SceneDataset& ds, const std::string& default_views) {
    if (!ctx.cfg.get<std::string>("paths.field", "").empty()) return load_field(existing_path(ctx.cfg, "paths.field"));
    auto field = make_field<float>(read_field_config(ctx.cfg), ds.cameras.at(ds.input_index),
                                   derive_seed(ctx.seed, kFieldInitTag));
    const auto views = posed_views(ds, ctx.cfg.get<std::string>("fit.views", default_views));
    fit_scene(field, std::span<const PosedImage>(views), fit_config(ctx, derive_seed(ctx.seed, kFieldInitTag, 1)));
    return field;
}

int cmd_gen_scenes(const Context& ctx) {
    DatasetConfig dc = read_dataset_config(ctx.cfg);
    dc.seed = ctx.seed;
    dc.threads = ctx.threads;
    for (const auto& dir : generate_dataset(dc, ctx.out)) std::printf("wrote %s\n", dir.string().c_str());
    return 0;
}

int cmd_fit(const Context& ctx) {
    const SceneDataset ds = read_scene_dataset(existing_path(ctx.cfg, "paths.data"));
    auto field = make_field<float>(read_field_config(ctx.cfg), ds.cameras.at(ds.input_index),
                                   derive_seed(ctx.seed, kFieldInitTag));
    const auto views = posed_views(ds, ctx.cfg.get<std::string>("fit.views", "all"));
    const auto result = fit_scene(field, std::span<const PosedImage>(views), fit_config(ctx, ctx.seed));
    fs::create_directories(ctx.out);
    save_field(ctx.out / "field.ckpt", field);
    write_loss_csv(ctx.out / "loss.csv", result.loss);
    const auto renders = render_views(field, ds.cameras, output_render(ctx), ctx.seed);
    write_images(ctx.out / "renders", renders);
    report_metrics(ctx.out / "metrics.csv", renders, ds.images);
    return 0;
}

std::vector<fs::path> scene_dirs(const fs::path& root) {
    if (fs::exists(root / "meta.json")) return {root};
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw Error("no scene directories under " + root.string());
    return dirs;
}

int cmd_train_denoiser(const Context& ctx) {
    const auto dirs = scene_dirs(existing_path(ctx.cfg, "paths.data"));
    // With several scenes the last one is held out.
    const std::size_t train_count = dirs.size() > 1 ? dirs.size() - 1 : dirs.size();
    std::vector<DenoiserSample> train, held_out;
    for (std::size_t d = 0; d < dirs.size(); ++d) {
        const auto ds = read_scene_dataset(dirs[d]);
        for (const auto& im : ds.images) (d < train_count ? train : held_out).push_back({im, im});
    }
    auto den = TinyDenoiser::make(read_denoiser_config(ctx.cfg), derive_seed(ctx.seed, kFieldInitTag));
    DenoiserTrainConfig tc = read_denoiser_train_config(ctx.cfg);
    tc.seed = ctx.seed;
    const auto result = denoiser_train(den, train, tc);
    fs::create_directories(ctx.out);
    save_denoiser(ctx.out / "denoiser.ckpt", den);
    write_loss_csv(ctx.out / "loss.csv", result.loss);
    const auto& eval_set = held_out.empty() ? train : held_out;
    const std::uint64_t eval_seed = derive_seed(ctx.seed, 0x6576);
    nlohmann::json summary;
    summary["train_images"] = train.size();
    summary["eval_images"] = eval_set.size();
    summary["eval_loss"] = denoiser_eval_loss(den, eval_set, 4, eval_seed);
    summary["zero_predictor_loss"] = zero_predictor_loss(eval_set, 4, eval_seed);
    std::ofstream(ctx.out / "summary.json") << summary.dump(2) << "\n";
    std::printf("eval loss %.6g, zero predictor %.6g\n", summary["eval_loss"].get<double>(),
                summary["zero_predictor_loss"].get<double>());
    return 0;
}

// Everything the three distillation commands share.
struct Distillation {
    SceneDataset ds;
    FieldParams<float> field;
    std::vector<Camera> cameras;
    std::vector<Image> truth;
    PosedImage input;
    std::vector<GaussianMixtureOracle> oracles;
    std::optional<TinyDenoiser> denoiser;
    GuidanceConfig guidance;

    const ScoreModel& model(std::size_t k) const {
        if (denoiser) return *denoiser;
        return oracles.at(k);
    }
};

std::vector<Camera> prior_cameras(const RunConfig& cfg, const SceneDataset& ds) {
    const auto prior = cfg.get<std::string>("ngd.prior", "dataset");
    const int count = cfg.get("ngd.views", static_cast<int>(ds.cameras.size()));
    NERFDIFF_CHECK(count >= 1, "config: ngd.views must be positive");
    const Camera& like = ds.cameras.at(ds.input_index);
    if (prior == "dataset") {
        NERFDIFF_CHECK(count <= static_cast<int>(ds.cameras.size()), "config: ngd.views exceeds the dataset views");
        return {ds.cameras.begin(), ds.cameras.begin() + count};
    }
    if (prior == "circle") {
        std::vector<Pose> poses;
        for (const auto& c : ds.cameras) poses.push_back(c.pose);
        return cameras_from_poses(circle_prior_from_cameras(count, poses).poses, like);
    }
    if (prior == "spiral") {
        const double radius = cfg.get("ngd.radius", like.pose.translation.norm());
        const auto sample = sample_prior_spiral(count, radius, cfg.get("ngd.turns", 2.0), cfg.get("ngd.stride", 5));
        return cameras_from_poses(sample.poses, like);
    }
    throw Error("config: ngd.prior must be dataset, circle or spiral");
}

Distillation prepare_distillation(const Context& ctx) {
    Distillation d;
    d.ds = read_scene_dataset(existing_path(ctx.cfg, "paths.data"));
    d.guidance = read_guidance_config(ctx.cfg);
    d.guidance.threads = ctx.threads;
    d.guidance.guidance_render.threads = ctx.threads;
    d.guidance.train_render.threads = ctx.threads;
    d.cameras = prior_cameras(ctx.cfg, d.ds);
    if (ctx.cfg.get<std::string>("ngd.prior", "dataset") == "dataset") {
        d.truth.assign(d.ds.images.begin(), d.ds.images.begin() + static_cast<std::ptrdiff_t>(d.cameras.size()));
    } else {
        const int samples = read_dataset_config(ctx.cfg).gt_samples;
        for (const auto& cam : d.cameras) d.truth.push_back(render_ground_truth(d.ds.scene, cam, samples).rgb);
    }
    d.input = {d.ds.cameras.at(d.ds.input_index), d.ds.images.at(d.ds.input_index)};
    const auto model = ctx.cfg.get<std::string>("ngd.model", "oracle");
    if (model == "oracle") {
        ctx.cfg.require_keys("oracle", {"s", "include_truth", "perturbed_modes", "sigma_c", "sigma_g"});
        ViewOracleConfig oc;
        oc.s = ctx.cfg.get("oracle.s", oc.s);
        oc.include_truth = ctx.cfg.get("oracle.include_truth", oc.include_truth);
        oc.perturbed_modes = ctx.cfg.get("oracle.perturbed_modes", oc.perturbed_modes);
        oc.sigma_c = ctx.cfg.get("oracle.sigma_c", oc.sigma_c);
        oc.sigma_g = ctx.cfg.get("oracle.sigma_g", oc.sigma_g);
        d.oracles = make_view_oracles(d.truth, oc, derive_seed(ctx.seed, kOracleTag));
    } else if (model == "denoiser") {
        d.denoiser = load_denoiser(existing_path(ctx.cfg, "paths.denoiser"));
    } else {
        throw Error("config: ngd.model must be oracle or denoiser");
    }
    d.field = initial_field(ctx, d.ds, "input");
    return d;
}

void finish_distillation(const Context& ctx, const Distillation& d, const std::vector<Image>& samples) {
    fs::create_directories(ctx.out);
    save_field(ctx.out / "field.ckpt", d.field);
    write_images(ctx.out / "samples", samples);
    const auto renders = render_views(d.field, d.cameras, output_render(ctx), ctx.seed);
    write_images(ctx.out / "renders", renders);
    report_metrics(ctx.out / "metrics.csv", renders, d.truth);
}

int cmd_ngd(const Context& ctx) {
    Distillation d = prepare_distillation(ctx);
    const auto result = ngd_finetune(
        d.field, [&](std::size_t k) -> const ScoreModel& { return d.model(k); },
        d.guidance.include_input ? &d.input : nullptr, d.cameras, d.guidance, ctx.seed);
    fs::create_directories(ctx.out);
    write_diagnostics_csv(ctx.out / "diagnostics.csv", result.diagnostics);
    finish_distillation(ctx, d, result.views);
    return 0;
}

int cmd_distill_direct(const Context& ctx) {
    Distillation d = prepare_distillation(ctx);
    const auto result = direct_distill(
        d.field, [&](std::size_t k) -> const ScoreModel& { return d.model(k); },
        d.guidance.include_input ? &d.input : nullptr, d.cameras, d.guidance, ctx.seed);
    fs::create_directories(ctx.out);
    write_loss_csv(ctx.out / "loss.csv", result.loss);
    finish_distillation(ctx, d, result.samples);
    return 0;
}

int cmd_distill_sds(const Context& ctx) {
    Distillation d = prepare_distillation(ctx);
    const auto result = sds_finetune(
        d.field, [&](std::size_t k) -> const ScoreModel& { return d.model(k); },
        d.guidance.include_input ? &d.input : nullptr, d.cameras, d.guidance, read_sds_config(ctx.cfg), ctx.seed);
    fs::create_directories(ctx.out);
    write_loss_csv(ctx.out / "loss.csv", result.loss);
    finish_distillation(ctx, d, {});
    return 0;
}

int cmd_render(const Context& ctx) {
    const auto field = load_field(existing_path(ctx.cfg, "paths.field"));
    const SceneDataset ds = read_scene_dataset(existing_path(ctx.cfg, "paths.data"));
    const auto renders = render_views(field, ds.cameras, output_render(ctx), ctx.seed);
    write_images(ctx.out, renders);
    std::printf("rendered %zu views\n", renders.size());
    return 0;
}

Image read_render(const fs::path& dir, std::size_t k) {
    const auto f32 = dir / view_file(k, "f32");
    if (fs::exists(f32)) return read_float_image(f32);
    const auto ppm = dir / view_file(k, "ppm");
    if (fs::exists(ppm)) return read_ppm(ppm);
    throw Error("missing render " + f32.string());
}

int cmd_eval(const Context& ctx, const Options& opt) {
    if (opt.renders.empty() || opt.truth.empty()) throw UsageError("eval needs --renders and --truth");
    if (!fs::exists(opt.renders)) throw UsageError("renders directory does not exist: " + opt.renders);
    const SceneDataset ds = read_scene_dataset(opt.truth);
    if (const auto* requested = ctx.cfg.find("eval.metrics")) {
        for (const auto& m : *requested) {
            const auto name = m.get<std::string>();
            if (name == "lpips" || name == "fid")
                std::printf("note: %s needs a pretrained network and is not computed\n", name.c_str());
        }
    }
    std::vector<Image> renders;
    for (std::size_t k = 0; k < ds.images.size(); ++k) renders.push_back(read_render(opt.renders, k));
    if (!ctx.out.parent_path().empty()) fs::create_directories(ctx.out.parent_path());
    report_metrics(ctx.out, renders, ds.images);
    return 0;
}

void add_common(CLI::App* cmd, Options& opt, bool needs_seed) {
    cmd->add_option("--config", opt.config, "JSON run configuration");
    cmd->add_option("--set", opt.sets, "Override a config value, e.g. ngd.gamma_mode=snr");
    auto* seed = cmd->add_option("--seed", opt.seed, "Random seed");
    if (needs_seed) seed->required();
    cmd->add_option("--out", opt.out, "Output directory")->required();
    cmd->add_option("--threads", opt.threads, "Worker threads (1 gives bit-identical reruns)")
        ->check(CLI::NonNegativeNumber);
}

Context make_context(const Options& opt) {
    Context ctx;
    if (!opt.config.empty()) {
        if (!fs::exists(opt.config)) throw UsageError("config file does not exist: " + opt.config);
        ctx.cfg = RunConfig::load(opt.config);
    }
    for (const auto& s : opt.sets) ctx.cfg.set(s);
    if (!opt.data.empty()) ctx.cfg.set("paths.data=\"" + opt.data + "\"");
    if (!opt.field.empty()) ctx.cfg.set("paths.field=\"" + opt.field + "\"");
    if (!opt.denoiser.empty()) ctx.cfg.set("paths.denoiser=\"" + opt.denoiser + "\"");
    if (opt.num) ctx.cfg.set("data.num_scenes=" + std::to_string(*opt.num));
    if (opt.views) ctx.cfg.set("data.views_per_scene=" + std::to_string(*opt.views));
    if (opt.res) ctx.cfg.set("data.resolution=" + std::to_string(*opt.res));
    ctx.seed = opt.seed.value_or(0);
    ctx.out = opt.out;
    const unsigned hw = std::thread::hardware_concurrency();
    ctx.threads = opt.threads > 0 ? opt.threads : static_cast<int>(std::max(1u, hw));
    return ctx;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nerfdiff: triplane radiance fields distilled from diffusion models"};
    app.require_subcommand(1);
    Options opt;

    auto* gen = app.add_subcommand("gen-scenes", "Generate procedural scene datasets");
    add_common(gen, opt, true);
    gen->add_option("--num", opt.num, "Number of scenes");
    gen->add_option("--views", opt.views, "Views per scene");
    gen->add_option("--res", opt.res, "Image resolution");

    auto* fit = app.add_subcommand("fit", "Fit a field to the views of one scene");
    add_common(fit, opt, true);
    fit->add_option("--data", opt.data, "Scene directory");

    auto* train = app.add_subcommand("train-denoiser", "Train the conditional denoiser");
    add_common(train, opt, true);
    train->add_option("--data", opt.data, "Dataset root or scene directory");

    std::vector<CLI::App*> distill;
    distill.push_back(app.add_subcommand("ngd", "NeRF-guided distillation"));
    distill.push_back(app.add_subcommand("distill-direct", "Sample every view, then fit the field"));
    distill.push_back(app.add_subcommand("distill-sds", "Score distillation sampling"));
    for (auto* cmd : distill) {
        add_common(cmd, opt, true);
        cmd->add_option("--data", opt.data, "Scene directory");
        cmd->add_option("--field", opt.field, "Initial field checkpoint");
        cmd->add_option("--denoiser", opt.denoiser, "Denoiser checkpoint");
    }

    auto* render = app.add_subcommand("render", "Render a field at the cameras of a scene");
    add_common(render, opt, false);
    render->add_option("--data", opt.data, "Scene directory");
    render->add_option("--field", opt.field, "Field checkpoint");

    auto* eval = app.add_subcommand("eval", "Per-view PSNR and SSIM against ground truth");
    eval->add_option("--config", opt.config, "JSON run configuration");
    eval->add_option("--set", opt.sets, "Override a config value");
    eval->add_option("--renders", opt.renders, "Directory of view_NNN renders")->required();
    eval->add_option("--truth", opt.truth, "Scene directory with ground truth")->required();
    eval->add_option("--out", opt.out, "Metrics CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        const Context ctx = make_context(opt);
        if (gen->parsed()) return cmd_gen_scenes(ctx);
        if (fit->parsed()) return cmd_fit(ctx);
        if (train->parsed()) return cmd_train_denoiser(ctx);
        if (distill[0]->parsed()) return cmd_ngd(ctx);
        if (distill[1]->parsed()) return cmd_distill_direct(ctx);
        if (distill[2]->parsed()) return cmd_distill_sds(ctx);
        if (render->parsed()) return cmd_render(ctx);
        if (eval->parsed()) return cmd_eval(ctx, opt);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

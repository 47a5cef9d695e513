// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/config.hpp"

#include <fstream>
#include <numbers>
#include <sstream>

namespace nerfdiff {

namespace {

std::vector<std::string> split_key(const std::string& key) {
    std::vector<std::string> parts;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw Error("config: malformed key '" + key + "'");
        parts.push_back(part);
    }
    if (parts.empty()) throw Error("config: empty key");
    return parts;
}

std::string join(const std::string& section, const char* key) { return section + "." + key; }

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

} // namespace

RunConfig::RunConfig(nlohmann::json root) : root_(std::move(root)) {
    if (!root_.is_object()) throw Error("config: top level must be a JSON object");
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open " + path.string());
    try {
        return RunConfig(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("config: " + path.string() + ": " + e.what());
    }
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("config: expected key=value, got '" + assignment + "'");
    const auto parts = split_key(assignment.substr(0, eq));
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* node = &root_;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        auto& child = (*node)[parts[i]];
        if (child.is_null()) child = nlohmann::json::object();
        if (!child.is_object()) throw Error("config: '" + parts[i] + "' is not a section");
        node = &child;
    }
    (*node)[parts.back()] = std::move(value);
}

const nlohmann::json* RunConfig::find(const std::string& key) const {
    const nlohmann::json* node = &root_;
    for (const auto& part : split_key(key)) {
        if (!node->is_object()) return nullptr;
        const auto it = node->find(part);
        if (it == node->end()) return nullptr;
        node = &*it;
    }
    return node;
}

bool RunConfig::has(const std::string& key) const { return find(key) != nullptr; }

void RunConfig::require_keys(const std::string& section, std::initializer_list<const char*> known) const {
    const auto* node = find(section);
    if (!node) return;
    if (!node->is_object()) throw Error("config: '" + section + "' must be an object");
    for (const auto& [key, value] : node->items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw Error("config: unknown key '" + section + "." + key + "'");
    }
}

FieldConfig read_field_config(const RunConfig& cfg, const std::string& s) {
    cfg.require_keys(s, {"conditioning", "resolution", "channels", "hidden", "use_direction", "direction_freqs",
                         "use_posenc", "position_freqs", "init_feature_std"});
    FieldConfig out;
    const auto mode = cfg.get<std::string>(join(s, "conditioning"), "triplane");
    if (mode == "triplane")
        out.conditioning = Conditioning::triplane;
    else if (mode == "pixel_aligned")
        out.conditioning = Conditioning::pixel_aligned;
    else
        throw Error("config: " + s + ".conditioning must be triplane or pixel_aligned");
    out.resolution = cfg.get(join(s, "resolution"), out.resolution);
    out.channels = cfg.get(join(s, "channels"), out.channels);
    out.hidden = cfg.get(join(s, "hidden"), out.hidden);
    out.use_direction = cfg.get(join(s, "use_direction"), out.use_direction);
    out.direction_freqs = cfg.get(join(s, "direction_freqs"), out.direction_freqs);
    out.use_posenc = cfg.get(join(s, "use_posenc"), out.use_posenc);
    out.position_freqs = cfg.get(join(s, "position_freqs"), out.position_freqs);
    out.init_feature_std = cfg.get(join(s, "init_feature_std"), out.init_feature_std);
    NERFDIFF_CHECK(out.resolution >= 2 && out.channels >= 1 && out.hidden >= 1, "config: invalid field sizes");
    return out;
}

RenderConfig read_render_config(const RunConfig& cfg, const std::string& s, RenderConfig out) {
    cfg.require_keys(s, {"coarse_samples", "fine_samples", "jitter", "background", "chunk_rays"});
    out.coarse_samples = cfg.get(join(s, "coarse_samples"), out.coarse_samples);
    out.fine_samples = cfg.get(join(s, "fine_samples"), out.fine_samples);
    out.jitter = cfg.get(join(s, "jitter"), out.jitter);
    out.chunk_rays = cfg.get(join(s, "chunk_rays"), out.chunk_rays);
    if (const auto* bg = cfg.find(join(s, "background"))) {
        const auto v = bg->get<std::vector<double>>();
        NERFDIFF_CHECK(v.size() == 3, "config: background needs three values");
        out.background = Vec3(v[0], v[1], v[2]);
    }
    NERFDIFF_CHECK(out.coarse_samples >= 1 && out.fine_samples >= 0 && out.chunk_rays >= 1,
                   "config: invalid sample counts in " + s);
    return out;
}

FitConfig read_fit_config(const RunConfig& cfg, const std::string& s) {
    cfg.require_keys(s, {"steps", "batch_rays", "lr_mlp", "lr_triplane", "clip_norm", "render", "views"});
    FitConfig out;
    out.steps = cfg.get(join(s, "steps"), out.steps);
    out.batch_rays = cfg.get(join(s, "batch_rays"), out.batch_rays);
    out.lr_mlp = cfg.get(join(s, "lr_mlp"), out.lr_mlp);
    out.lr_triplane = cfg.get(join(s, "lr_triplane"), out.lr_triplane);
    out.clip_norm = cfg.get(join(s, "clip_norm"), out.clip_norm);
    out.render = read_render_config(cfg, join(s, "render"), out.render);
    NERFDIFF_CHECK(out.steps >= 0 && out.batch_rays >= 1, "config: invalid fit counts");
    return out;
}

GuidanceConfig read_guidance_config(const RunConfig& cfg, const std::string& s) {
    cfg.require_keys(s, {"ddim_steps", "nerf_steps", "batch_rays", "lr_mlp", "lr_triplane", "clip_norm", "gamma_mode",
                         "gamma", "target", "include_input", "guidance_render", "train_render", "views", "prior",
                         "radius", "turns", "stride", "model"});
    GuidanceConfig out;
    out.ddim_steps = cfg.get(join(s, "ddim_steps"), out.ddim_steps);
    out.nerf_steps = cfg.get(join(s, "nerf_steps"), out.nerf_steps);
    out.batch_rays = cfg.get(join(s, "batch_rays"), out.batch_rays);
    out.lr_mlp = cfg.get(join(s, "lr_mlp"), out.lr_mlp);
    out.lr_triplane = cfg.get(join(s, "lr_triplane"), out.lr_triplane);
    out.clip_norm = cfg.get(join(s, "clip_norm"), out.clip_norm);
    const auto mode = cfg.get<std::string>(join(s, "gamma_mode"), "snr");
    if (mode == "snr")
        out.gamma_mode = GammaMode::snr;
    else if (mode == "constant")
        out.gamma_mode = GammaMode::constant;
    else
        throw Error("config: " + s + ".gamma_mode must be snr or constant");
    out.gamma = cfg.get(join(s, "gamma"), out.gamma);
    const auto target = cfg.get<std::string>(join(s, "target"), "unguided");
    if (target == "unguided")
        out.target = TargetMode::unguided;
    else if (target == "guided")
        out.target = TargetMode::guided;
    else
        throw Error("config: " + s + ".target must be unguided or guided");
    out.include_input = cfg.get(join(s, "include_input"), out.include_input);
    out.guidance_render = read_render_config(cfg, join(s, "guidance_render"), out.guidance_render);
    out.train_render = read_render_config(cfg, join(s, "train_render"), out.train_render);
    NERFDIFF_CHECK(out.ddim_steps >= 1 && out.nerf_steps >= 0 && out.batch_rays >= 1 && out.gamma >= 0.0,
                   "config: invalid guidance settings");
    return out;
}

SdsConfig read_sds_config(const RunConfig& cfg, const std::string& s) {
    cfg.require_keys(s, {"iterations", "nerf_steps", "t_min", "t_max"});
    SdsConfig out;
    out.iterations = cfg.get(join(s, "iterations"), out.iterations);
    out.nerf_steps = cfg.get(join(s, "nerf_steps"), out.nerf_steps);
    out.t_min = cfg.get(join(s, "t_min"), out.t_min);
    out.t_max = cfg.get(join(s, "t_max"), out.t_max);
    return out;
}

DenoiserConfig read_denoiser_config(const RunConfig& cfg, const std::string& s) {
    cfg.require_keys(s, {"channels", "window", "hidden", "hidden_layers", "time_freqs", "conditional", "sigma_floor",
                         "steps", "batch", "lr"});
    DenoiserConfig out;
    out.channels = cfg.get(join(s, "channels"), out.channels);
    out.window = cfg.get(join(s, "window"), out.window);
    out.hidden = cfg.get(join(s, "hidden"), out.hidden);
    out.hidden_layers = cfg.get(join(s, "hidden_layers"), out.hidden_layers);
    out.time_freqs = cfg.get(join(s, "time_freqs"), out.time_freqs);
    out.conditional = cfg.get(join(s, "conditional"), out.conditional);
    out.sigma_floor = cfg.get(join(s, "sigma_floor"), out.sigma_floor);
    return out;
}

DenoiserTrainConfig read_denoiser_train_config(const RunConfig& cfg, const std::string& s) {
    DenoiserTrainConfig out;
    out.steps = cfg.get(join(s, "steps"), out.steps);
    out.batch = cfg.get(join(s, "batch"), out.batch);
    out.lr = cfg.get(join(s, "lr"), out.lr);
    NERFDIFF_CHECK(out.steps >= 0 && out.batch >= 1 && out.lr >= 0.0, "config: invalid denoiser training settings");
    return out;
}

DatasetConfig read_dataset_config(const RunConfig& cfg, const std::string& s) {
    cfg.require_keys(s, {"num_scenes", "views_per_scene", "resolution", "rig", "distance", "fov_deg", "elevation_deg",
                         "turns", "gt_samples"});
    DatasetConfig out;
    out.num_scenes = cfg.get(join(s, "num_scenes"), out.num_scenes);
    out.views_per_scene = cfg.get(join(s, "views_per_scene"), out.views_per_scene);
    out.resolution = cfg.get(join(s, "resolution"), out.resolution);
    const auto rig = cfg.get<std::string>(join(s, "rig"), "circle");
    if (rig == "circle")
        out.rig.rig = CameraRig::circle;
    else if (rig == "spiral")
        out.rig.rig = CameraRig::spiral;
    else
        throw Error("config: " + s + ".rig must be circle or spiral");
    out.rig.distance = cfg.get(join(s, "distance"), out.rig.distance);
    if (const auto* v = cfg.find(join(s, "fov_deg"))) out.rig.fov_x = radians(v->get<double>());
    if (const auto* v = cfg.find(join(s, "elevation_deg"))) out.rig.elevation = radians(v->get<double>());
    out.rig.turns = cfg.get(join(s, "turns"), out.rig.turns);
    out.gt_samples = cfg.get(join(s, "gt_samples"), out.gt_samples);
    NERFDIFF_CHECK(out.num_scenes >= 1 && out.views_per_scene >= 1 && out.resolution >= 1,
                   "config: dataset counts must be at least 1");
    return out;
}

} // namespace nerfdiff

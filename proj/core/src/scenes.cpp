// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/scenes.hpp"

#include "nerfdiff/error.hpp"
#include "nerfdiff/parallel.hpp"
#include "nerfdiff/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace nerfdiff {

namespace {

double signed_distance(const Primitive& p, const Vec3& x) {
    const Vec3 local = x - p.center;
    if (p.shape == Shape::sphere) return local.norm() - p.size;
    const Vec3 q = local.cwiseAbs() - Vec3::Constant(p.size);
    return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double occupancy(const Primitive& p, double sd) {
    const double half = 0.5 * p.softness * p.size;
    if (half <= 0.0) return sd <= 0.0 ? 1.0 : 0.0;
    const double u = std::clamp((half - sd) / (2.0 * half), 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 json_vec(const nlohmann::json& j) {
    NERFDIFF_CHECK(j.is_array() && j.size() == 3, "expected a 3-vector in meta.json");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string view_name(int k, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03d.%s", k, ext);
    return buf;
}

} // namespace

FieldValue scene_field(const AnalyticScene& scene, const Vec3& x) {
    FieldValue out;
    Vec3 weighted = Vec3::Zero();
    for (const auto& p : scene.primitives) {
        const double occ = occupancy(p, signed_distance(p, x));
        if (occ <= 0.0) continue;
        const double d = p.amplitude * occ;
        out.density += d;
        weighted += d * p.color;
    }
    if (out.density > 0.0) out.rgb = weighted / out.density;
    return out;
}

RenderedImage render_ground_truth(const AnalyticScene& scene, const Camera& camera, int samples) {
    NERFDIFF_CHECK(samples >= 1, "render_ground_truth: need at least one sample");
    const int h = camera.intrinsics.height;
    const int w = camera.intrinsics.width;
    RenderedImage img{Image(h, w, 3), Image(h, w, 1), Image(h, w, 1)};
    const auto rays = generate_rays(camera);
    std::vector<double> t(static_cast<std::size_t>(samples)), rgb(3 * t.size()), density(t.size());
    for (std::size_t k = 0; k < rays.size(); ++k) {
        const Ray& ray = rays[k];
        const double width = (ray.t_far - ray.t_near) / samples;
        for (int s = 0; s < samples; ++s) {
            const auto i = static_cast<std::size_t>(s);
            t[i] = ray.t_near + (s + 0.5) * width;
            const auto f = scene_field(scene, ray.at(t[i]));
            for (int c = 0; c < 3; ++c) rgb[3 * i + c] = f.rgb[c];
            density[i] = f.density;
        }
        const auto res = composite(t, ray.t_far, rgb, density, scene.background);
        for (int c = 0; c < 3; ++c) img.rgb.pixels[3 * k + c] = res.rgb[c];
        img.opacity.pixels[k] = res.opacity;
        img.depth.pixels[k] = res.depth;
    }
    return img;
}

std::vector<Camera> make_rig(const RigConfig& rig, int count, int width, int height) {
    NERFDIFF_CHECK(count >= 1, "make_rig: need at least one camera");
    NERFDIFF_CHECK(rig.distance > 0.0, "make_rig: distance must be positive");
    std::vector<Vec3> eyes;
    if (rig.rig == CameraRig::circle) {
        for (int k = 0; k < count; ++k) {
            const double az = 2.0 * std::numbers::pi * k / count;
            eyes.emplace_back(rig.distance * std::cos(rig.elevation) * std::cos(az),
                              rig.distance * std::cos(rig.elevation) * std::sin(az),
                              rig.distance * std::sin(rig.elevation));
        }
    } else {
        eyes = archimedean_spiral(count, rig.distance, rig.turns);
    }
    const Intrinsics intr = Intrinsics::from_fov(width, height, rig.fov_x);
    std::vector<Camera> cams;
    for (const auto& eye : eyes)
        cams.push_back({intr, look_at(eye, Vec3::Zero(), Vec3::UnitZ()), 0.5 * rig.distance, 1.5 * rig.distance});
    return cams;
}

AnalyticScene random_scene(std::uint64_t seed) {
    SplitMix rng(derive_seed(seed, 0x5343));
    AnalyticScene scene;
    const int count = 2 + static_cast<int>(rng() % 2);
    for (int k = 0; k < count; ++k) {
        Primitive p;
        p.shape = rng.uniform() < 0.5 ? Shape::sphere : Shape::box;
        Vec3 c;
        do {
            c = Vec3(2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
        } while (c.norm() > 1.0);
        p.center = 0.35 * c;
        p.size = p.shape == Shape::sphere ? 0.2 + 0.2 * rng.uniform() : 0.15 + 0.15 * rng.uniform();
        p.amplitude = 20.0 + 20.0 * rng.uniform();
        p.color = Vec3(0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform());
        scene.primitives.push_back(p);
    }
    return scene;
}

std::vector<SceneDataset> build_datasets(const DatasetConfig& cfg) {
    NERFDIFF_CHECK(cfg.num_scenes >= 1 && cfg.views_per_scene >= 1 && cfg.resolution >= 1,
                   "dataset counts must be positive");
    std::vector<SceneDataset> out(static_cast<std::size_t>(cfg.num_scenes));
    for (int s = 0; s < cfg.num_scenes; ++s) {
        auto& ds = out[static_cast<std::size_t>(s)];
        char id[32];
        std::snprintf(id, sizeof(id), "scene%d", s);
        ds.scene_id = id;
        ds.scene = random_scene(derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
        ds.cameras = make_rig(cfg.rig, cfg.views_per_scene, cfg.resolution, cfg.resolution);
        ds.images.resize(ds.cameras.size());
        for (int k = 0; k < cfg.views_per_scene; ++k) ds.files.push_back(view_name(k, "f32"));
        ds.split = cfg.views_per_scene >= 2 ? "train" : "test";
    }
    // Render every view of every scene; each job writes its own slot.
    const std::size_t per = static_cast<std::size_t>(cfg.views_per_scene);
    parallel_ranges(out.size() * per, cfg.threads, [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            auto& ds = out[j / per];
            ds.images[j % per] = render_ground_truth(ds.scene, ds.cameras[j % per], cfg.gt_samples).rgb;
        }
    });
    return out;
}

void write_scene_dataset(const SceneDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    NERFDIFF_CHECK(!ds.cameras.empty() && ds.cameras.size() == ds.images.size(), "dataset: one image per camera");
    const Intrinsics& intr = ds.cameras.front().intrinsics;
    nlohmann::json meta;
    meta["scene_id"] = ds.scene_id;
    meta["resolution"] = {intr.height, intr.width};
    meta["intrinsics"] = {{"fx", intr.focal_x}, {"fy", intr.focal_y}, {"cx", intr.center_x}, {"cy", intr.center_y}};
    meta["t_near"] = ds.cameras.front().t_near;
    meta["t_far"] = ds.cameras.front().t_far;
    meta["input_index"] = ds.input_index;
    meta["split"] = ds.split;
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t k = 0; k < ds.cameras.size(); ++k) {
        const Pose& pose = ds.cameras[k].pose;
        std::vector<double> r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.push_back(pose.rotation(i, j));
        const std::string f32 = view_name(static_cast<int>(k), "f32");
        views.push_back({{"pose_r", r},
                         {"pose_t", vec_json(pose.translation)},
                         {"file", f32},
                         {"ppm", view_name(static_cast<int>(k), "ppm")}});
        write_float_image(dir / f32, ds.images[k]);
        write_ppm(dir / view_name(static_cast<int>(k), "ppm"), ds.images[k]);
    }
    meta["views"] = views;
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : ds.scene.primitives)
        prims.push_back({{"shape", p.shape == Shape::sphere ? "sphere" : "box"},
                         {"center", vec_json(p.center)},
                         {"size", p.size},
                         {"amplitude", p.amplitude},
                         {"color", vec_json(p.color)},
                         {"softness", p.softness}});
    meta["scene"] = {{"background", vec_json(ds.scene.background)}, {"primitives", prims}};
    std::ofstream out(dir / "meta.json");
    if (!out) throw Error("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << "\n";
}

SceneDataset read_scene_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw Error("cannot open " + (dir / "meta.json").string());
    SceneDataset ds;
    try {
        const auto meta = nlohmann::json::parse(in);
        ds.scene_id = meta.at("scene_id").get<std::string>();
        ds.input_index = meta.value("input_index", 0);
        ds.split = meta.value("split", "train");
        const auto& res = meta.at("resolution");
        Intrinsics intr;
        intr.height = res.at(0).get<int>();
        intr.width = res.at(1).get<int>();
        const auto& ij = meta.at("intrinsics");
        intr.focal_x = ij.at("fx").get<double>();
        intr.focal_y = ij.at("fy").get<double>();
        intr.center_x = ij.at("cx").get<double>();
        intr.center_y = ij.at("cy").get<double>();
        intr.validate();
        const double tn = meta.at("t_near").get<double>();
        const double tf = meta.at("t_far").get<double>();
        for (const auto& v : meta.at("views")) {
            Camera cam{intr, {}, tn, tf};
            const auto r = v.at("pose_r").get<std::vector<double>>();
            NERFDIFF_CHECK(r.size() == 9, "pose_r must hold 9 values");
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) cam.pose.rotation(i, j) = r[static_cast<std::size_t>(3 * i + j)];
            cam.pose.translation = json_vec(v.at("pose_t"));
            cam.pose.validate();
            const auto file = v.at("file").get<std::string>();
            ds.cameras.push_back(cam);
            ds.files.push_back(file);
            ds.images.push_back(read_float_image(dir / file));
        }
        if (meta.contains("scene")) {
            const auto& sc = meta.at("scene");
            ds.scene.background = json_vec(sc.at("background"));
            for (const auto& p : sc.at("primitives")) {
                Primitive prim;
                prim.shape = p.at("shape").get<std::string>() == "box" ? Shape::box : Shape::sphere;
                prim.center = json_vec(p.at("center"));
                prim.size = p.at("size").get<double>();
                prim.amplitude = p.at("amplitude").get<double>();
                prim.color = json_vec(p.at("color"));
                prim.softness = p.at("softness").get<double>();
                ds.scene.primitives.push_back(prim);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid meta.json in " + dir.string() + ": " + e.what());
    }
    return ds;
}

std::vector<std::filesystem::path> generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
    const auto datasets = build_datasets(cfg);
    std::vector<std::filesystem::path> dirs;
    for (const auto& ds : datasets) {
        dirs.push_back(out_dir / ds.scene_id);
        write_scene_dataset(ds, dirs.back());
    }
    return dirs;
}

Image shift_and_offset(const Image& image, double shift_x, double shift_y, const Vec3& offset) {
    Image out(image.height, image.width, image.channels);
    const int h = image.height;
    const int w = image.width;
    for (int row = 0; row < h; ++row) {
        const double sy = std::clamp(row - shift_y, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(std::floor(sy));
        const int y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - y0;
        for (int col = 0; col < w; ++col) {
            const double sx = std::clamp(col - shift_x, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(std::floor(sx));
            const int x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const double v = (1 - fy) * ((1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c)) +
                                 fy * ((1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c));
                out.at(row, col, c) = std::clamp(v + offset[c % 3], 0.0, 1.0);
            }
        }
    }
    return out;
}

std::vector<Image> perturb_views(const std::vector<Image>& views, std::uint64_t seed, double sigma_c, double sigma_g) {
    NERFDIFF_CHECK(sigma_c >= 0.0 && sigma_g >= 0.0, "perturb_views: sigmas must be non-negative");
    std::vector<Image> out;
    for (std::size_t k = 0; k < views.size(); ++k) {
        if (sigma_c == 0.0 && sigma_g == 0.0) {
            out.push_back(views[k]);
            continue;
        }
        SplitMix rng(derive_seed(seed, k, 0x7072));
        Vec3 offset;
        for (int c = 0; c < 3; ++c) offset[c] = sigma_c * rng.normal();
        const double sx = sigma_g * rng.normal();
        const double sy = sigma_g * rng.normal();
        out.push_back(shift_and_offset(views[k], sx, sy, offset));
    }
    return out;
}

std::vector<GaussianMixtureOracle> make_view_oracles(const std::vector<Image>& truth, const ViewOracleConfig& cfg,
                                                     std::uint64_t seed) {
    NERFDIFF_CHECK(cfg.perturbed_modes >= 0, "make_view_oracles: negative mode count");
    NERFDIFF_CHECK(cfg.include_truth || cfg.perturbed_modes > 0, "make_view_oracles: no mixture components");
    std::vector<std::vector<Image>> modes;
    for (int m = 0; m < cfg.perturbed_modes; ++m)
        modes.push_back(
            perturb_views(truth, derive_seed(seed, static_cast<std::uint64_t>(m)), cfg.sigma_c, cfg.sigma_g));
    std::vector<GaussianMixtureOracle> out;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        std::vector<Image> means;
        if (cfg.include_truth) means.push_back(truth[k]);
        for (const auto& mode : modes) means.push_back(mode[k]);
        std::vector<double> weights(means.size(), 1.0 / static_cast<double>(means.size()));
        out.emplace_back(std::move(weights), std::move(means), cfg.s);
    }
    return out;
}

} // namespace nerfdiff

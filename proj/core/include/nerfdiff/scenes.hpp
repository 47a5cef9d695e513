// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/geometry.hpp"
#include "nerfdiff/image.hpp"
#include "nerfdiff/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nerfdiff {

enum class Shape { sphere, box };

/**
 * Soft-edged primitive. `size` is the sphere radius or the box half-extent.
 * Occupancy is 1 inside, 0 outside, with a smoothstep over a shell of
 * `softness * size` straddling the surface.
 */
struct Primitive {
    Shape shape = Shape::sphere;
    Vec3 center = Vec3::Zero();
    double size = 0.5;
    double amplitude = 30.0;
    Vec3 color = Vec3::Constant(0.5);
    double softness = 0.05;
};

struct AnalyticScene {
    std::vector<Primitive> primitives;
    Vec3 background = Vec3::Ones();
};

struct FieldValue {
    Vec3 rgb = Vec3::Zero();
    double density = 0.0;
};

/// Density is the sum of amplitude * occupancy; color is the density-weighted
/// average of primitive colors (zero where the density is zero).
FieldValue scene_field(const AnalyticScene& scene, const Vec3& x);

/// Deterministic midpoint quadrature with `samples` samples per ray over each
/// ray's [t_near, t_far], composited over the scene background.
RenderedImage render_ground_truth(const AnalyticScene& scene, const Camera& camera, int samples = 512);

enum class CameraRig { spiral, circle };

struct RigConfig {
    CameraRig rig = CameraRig::circle;
    double distance = 2.5;
    double fov_x = 0.8726646259971648; // 50 degrees
    /// Circle rig: camera elevation above the xy plane (radians).
    double elevation = 0.5235987755982988; // 30 degrees
    /// Spiral rig: number of turns.
    double turns = 2.0;
};

/// Cameras looking at the origin with world z up; t_near = 0.5 d, t_far = 1.5 d.
/// The circle rig spaces views 360 / count degrees apart in azimuth.
std::vector<Camera> make_rig(const RigConfig& rig, int count, int width, int height);

/// 2 or 3 random primitives inside the unit ball.
AnalyticScene random_scene(std::uint64_t seed);

struct SceneDataset {
    std::string scene_id;
    AnalyticScene scene;
    std::vector<Camera> cameras;
    std::vector<Image> images;
    std::vector<std::string> files;
    std::string split = "train";
    int input_index = 0;
};

struct DatasetConfig {
    std::uint64_t seed = 0;
    int num_scenes = 1;
    int views_per_scene = 8;
    int resolution = 64;
    RigConfig rig;
    int gt_samples = 512;
    int threads = 1;
};

/// Scene descriptions, cameras and ground-truth renders, without touching disk.
std::vector<SceneDataset> build_datasets(const DatasetConfig& cfg);

/// Writes scene_%03d/meta.json plus view_%03d.ppm and view_%03d.f32 per view.
std::vector<std::filesystem::path> generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

void write_scene_dataset(const SceneDataset& ds, const std::filesystem::path& dir);
/// Reads meta.json and the float images of one scene directory.
SceneDataset read_scene_dataset(const std::filesystem::path& dir);

/**
 * Independent per-view corruption: a global color offset ~ N(0, sigma_c^2) per
 * channel and an image-space translation ~ N(0, sigma_g^2) pixels per axis,
 * applied with bilinear resampling (edge clamped); results are clamped to [0, 1].
 */
std::vector<Image> perturb_views(const std::vector<Image>& views, std::uint64_t seed, double sigma_c, double sigma_g);

/// Fixed corruption of one image: add `offset` to every channel value after
/// translating the content by (shift_x, shift_y) pixels.
Image shift_and_offset(const Image& image, double shift_x, double shift_y, const Vec3& offset);

struct ViewOracleConfig {
    /// Standard deviation of every mixture component.
    double s = 0.0;
    /// Keeps the clean view as a component.
    bool include_truth = true;
    /// Perturbed copies added as further components.
    int perturbed_modes = 0;
    double sigma_c = 0.1;
    double sigma_g = 2.0;
};

/// One equal-weight Gaussian mixture per view. Perturbed mode m of every view
/// comes from perturb_views(truth, derive_seed(seed, m), sigma_c, sigma_g).
std::vector<GaussianMixtureOracle> make_view_oracles(const std::vector<Image>& truth, const ViewOracleConfig& cfg,
                                                     std::uint64_t seed);

} // namespace nerfdiff

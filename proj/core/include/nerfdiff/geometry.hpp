// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <vector>

namespace nerfdiff {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/**
 * Pinhole intrinsics in pixels.
 *
 * Pixel (i, j) is column i (left to right) and row j (top to bottom); its
 * center sits at (i + 0.5, j + 0.5) in continuous image coordinates.
 */
struct Intrinsics {
    double focal_x = 1.0;
    double focal_y = 1.0;
    double center_x = 0.5;
    double center_y = 0.5;
    int width = 1;
    int height = 1;

    /// Symmetric intrinsics with the given horizontal field of view (radians)
    /// and square pixels.
    static Intrinsics from_fov(int width, int height, double fov_x);

    /// Throws Error when focal lengths are not positive, the image is empty, or
    /// the principal point lies outside the image.
    void validate() const;
};

/**
 * Rigid camera-to-world transform. The camera frame is right-handed and looks
 * down its own -z axis (x right, y up), so the world-space forward axis is the
 * negated third column of `rotation`.
 */
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }

    Vec3 forward() const { return -rotation.col(2); }
    Vec3 right() const { return rotation.col(0); }
    Vec3 up() const { return rotation.col(1); }

    /// Maps a point expressed in this frame to the parent frame.
    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 apply_direction(const Vec3& d) const { return rotation * d; }
    /// Maps a parent-frame point into this frame.
    Vec3 inverse_apply(const Vec3& p) const { return rotation.transpose() * (p - translation); }

    Pose inverse() const;

    /// Orthonormality and det(R) = +1 within `tolerance`.
    void validate(double tolerance = 1e-6) const;
};

/// Returns `second` after `first`: compose(a, b).apply(p) == b.apply(a.apply(p)).
Pose compose(const Pose& first, const Pose& second);

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = -Vec3::UnitZ();
    double t_near = 0.0;
    double t_far = 1.0;

    Vec3 at(double t) const { return origin + t * direction; }
    void validate(double tolerance = 1e-6) const;
};

/// Intrinsics, pose and the depth bounds used for every ray of the camera.
struct Camera {
    Intrinsics intrinsics;
    Pose pose;
    double t_near = 0.5;
    double t_far = 1.5;
};

/// Look-at pose: forward axis from `eye` toward `target`, with `up_hint`
/// fixing the roll. Throws Error when eye == target or up_hint is parallel to
/// the viewing direction.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint);

/// Camera-space (unnormalized, z = -1) direction through pixel (i, j).
Vec3 pixel_direction_camera(const Intrinsics& intr, double u, double v);

/// Normalized image coordinates in [-1, 1]^2 of pixel (i, j)'s center.
Vec2 normalized_pixel(const Intrinsics& intr, int i, int j);

/// Ray through the center of pixel (i, j). Throws on out-of-bounds pixels.
Ray generate_ray(const Camera& camera, int i, int j);

/// All rays of the camera, row-major (index = j * width + i).
std::vector<Ray> generate_rays(const Camera& camera);

/// Projects a camera-space point onto the image plane: (-1, -1) is the image
/// min corner, (1, 1) the max corner. Throws Error for points with
/// non-positive depth (at or behind the camera).
Vec2 project(const Vec3& point_camera, const Intrinsics& intr);

/// Depth of a camera-space point along the viewing axis (-z).
inline double camera_depth(const Vec3& point_camera) { return -point_camera.z(); }

enum class DepthPolicy { clamp, reject };

/// Frustum contraction of a camera-space point:
/// [P(x), 2 (depth - t_near) / (t_far - t_near) - 1].
/// With DepthPolicy::clamp the depth is clamped to [t_near + eps, t_far - eps];
/// with DepthPolicy::reject a depth outside (t_near, t_far) throws Error.
Vec3 contract(const Vec3& point_camera, const Intrinsics& intr, double t_near, double t_far,
              DepthPolicy policy = DepthPolicy::clamp, double eps = 1e-6);

/// Transform taking source-camera coordinates to target-camera coordinates.
Pose relative_pose(const Pose& source, const Pose& target);

/// `count` points on an Archimedean spiral over the sphere of `radius` about the
/// origin: the polar angle runs linearly from `polar_margin` to pi - polar_margin
/// while the azimuth makes `turns` full revolutions.
std::vector<Vec3> archimedean_spiral(int count, double radius, double turns, double polar_margin = 0.2);

} // namespace nerfdiff

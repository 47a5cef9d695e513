// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/geometry.hpp"

#include "nerfdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace nerfdiff {

Intrinsics Intrinsics::from_fov(int width, int height, double fov_x) {
    NERFDIFF_CHECK(fov_x > 0.0 && fov_x < std::numbers::pi, "field of view must lie in (0, pi)");
    Intrinsics intr;
    intr.width = width;
    intr.height = height;
    intr.focal_x = 0.5 * width / std::tan(0.5 * fov_x);
    intr.focal_y = intr.focal_x;
    intr.center_x = 0.5 * width;
    intr.center_y = 0.5 * height;
    intr.validate();
    return intr;
}

void Intrinsics::validate() const {
    NERFDIFF_CHECK(focal_x > 0.0 && focal_y > 0.0, "focal lengths must be positive");
    NERFDIFF_CHECK(width >= 1 && height >= 1, "image size must be at least 1x1");
    NERFDIFF_CHECK(center_x >= 0.0 && center_x <= width && center_y >= 0.0 && center_y <= height,
                   "principal point must lie inside the image");
}

Pose Pose::inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
}

void Pose::validate(double tolerance) const {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    NERFDIFF_CHECK(ortho <= tolerance, "pose rotation is not orthonormal");
    NERFDIFF_CHECK(std::abs(rotation.determinant() - 1.0) <= tolerance, "pose rotation must have det +1");
    NERFDIFF_CHECK(translation.allFinite(), "pose translation is not finite");
}

Pose compose(const Pose& first, const Pose& second) {
    Pose out;
    out.rotation = second.rotation * first.rotation;
    out.translation = second.rotation * first.translation + second.translation;
    return out;
}

void Ray::validate(double tolerance) const {
    NERFDIFF_CHECK(std::abs(direction.norm() - 1.0) <= tolerance, "ray direction must be unit length");
    NERFDIFF_CHECK(t_near >= 0.0 && t_near < t_far, "ray bounds must satisfy 0 <= t_near < t_far");
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint) {
    const Vec3 offset = target - eye;
    NERFDIFF_CHECK(offset.norm() > 1e-12, "look_at: eye and target coincide");
    const Vec3 forward = offset.normalized();
    const Vec3 side = forward.cross(up_hint);
    NERFDIFF_CHECK(side.norm() > 1e-9 * std::max(1.0, up_hint.norm()),
                   "look_at: up hint is parallel to the viewing direction");
    const Vec3 right = side.normalized();
    const Vec3 up = right.cross(forward);
    Pose pose;
    pose.rotation.col(0) = right;
    pose.rotation.col(1) = up;
    pose.rotation.col(2) = -forward;
    pose.translation = eye;
    return pose;
}

Vec3 pixel_direction_camera(const Intrinsics& intr, double u, double v) {
    return {(u - intr.center_x) / intr.focal_x, -(v - intr.center_y) / intr.focal_y, -1.0};
}

Vec2 normalized_pixel(const Intrinsics& intr, int i, int j) {
    return {2.0 * (i + 0.5) / intr.width - 1.0, 2.0 * (j + 0.5) / intr.height - 1.0};
}

Ray generate_ray(const Camera& camera, int i, int j) {
    const Intrinsics& intr = camera.intrinsics;
    if (i < 0 || j < 0 || i >= intr.width || j >= intr.height)
        throw Error("pixel (" + std::to_string(i) + ", " + std::to_string(j) + ") outside the image");
    Ray ray;
    ray.origin = camera.pose.translation;
    ray.direction = camera.pose.apply_direction(pixel_direction_camera(intr, i + 0.5, j + 0.5)).normalized();
    ray.t_near = camera.t_near;
    ray.t_far = camera.t_far;
    return ray;
}

std::vector<Ray> generate_rays(const Camera& camera) {
    const Intrinsics& intr = camera.intrinsics;
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(intr.width) * intr.height);
    for (int j = 0; j < intr.height; ++j)
        for (int i = 0; i < intr.width; ++i) rays.push_back(generate_ray(camera, i, j));
    return rays;
}

Vec2 project(const Vec3& point_camera, const Intrinsics& intr) {
    const double depth = camera_depth(point_camera);
    NERFDIFF_CHECK(depth > 0.0, "project: point is behind the camera");
    const double u = intr.center_x + intr.focal_x * point_camera.x() / depth;
    const double v = intr.center_y - intr.focal_y * point_camera.y() / depth;
    return {2.0 * u / intr.width - 1.0, 2.0 * v / intr.height - 1.0};
}

Vec3 contract(const Vec3& point_camera, const Intrinsics& intr, double t_near, double t_far, DepthPolicy policy,
              double eps) {
    NERFDIFF_CHECK(t_near < t_far, "contract: t_near must be below t_far");
    double depth = camera_depth(point_camera);
    if (policy == DepthPolicy::reject) {
        NERFDIFF_CHECK(depth > t_near && depth < t_far, "contract: depth outside (t_near, t_far)");
    } else {
        depth = std::clamp(depth, t_near + eps, t_far - eps);
    }
    const Vec2 uv = project(point_camera, intr);
    return {uv.x(), uv.y(), 2.0 * (depth - t_near) / (t_far - t_near) - 1.0};
}

Pose relative_pose(const Pose& source, const Pose& target) { return compose(source, target.inverse()); }

std::vector<Vec3> archimedean_spiral(int count, double radius, double turns, double polar_margin) {
    NERFDIFF_CHECK(count >= 1, "archimedean_spiral: need at least one point");
    NERFDIFF_CHECK(radius > 0.0, "archimedean_spiral: radius must be positive");
    NERFDIFF_CHECK(polar_margin >= 0.0 && polar_margin < 0.5 * std::numbers::pi,
                   "archimedean_spiral: invalid polar margin");
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double s = count == 1 ? 0.5 : static_cast<double>(k) / (count - 1);
        const double polar = polar_margin + s * (std::numbers::pi - 2.0 * polar_margin);
        const double azimuth = 2.0 * std::numbers::pi * turns * s;
        out.emplace_back(radius * std::sin(polar) * std::cos(azimuth), radius * std::sin(polar) * std::sin(azimuth),
                         radius * std::cos(polar));
    }
    return out;
}

} // namespace nerfdiff

// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/error.hpp"
#include "nerfdiff/geometry.hpp"
#include "nerfdiff/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nerfdiff;

namespace {

Vec3 random_vec(SplitMix& rng, double scale = 1.0) { return Vec3(rng.normal(), rng.normal(), rng.normal()) * scale; }

Camera test_camera(int w, int h, double fov, const Pose& pose) {
    Camera cam;
    cam.intrinsics = Intrinsics::from_fov(w, h, fov);
    cam.pose = pose;
    cam.t_near = 1.0;
    cam.t_far = 3.0;
    return cam;
}

} // namespace

TEST(LookAt, AxisAlignedCases) {
    const Pose a = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3(0, 1, 0));
    EXPECT_NEAR((a.forward() - Vec3(0, 0, -1)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((a.translation - Vec3(0, 0, 2)).norm(), 0.0, 1e-15);

    const Pose b = look_at(Vec3(2, 0, 0), Vec3::Zero(), Vec3(0, 0, 1));
    EXPECT_NEAR((b.forward() - Vec3(-1, 0, 0)).norm(), 0.0, 1e-15);
    EXPECT_GT(b.up().z(), 0.0);
}

TEST(LookAt, RandomPosesAreOrthonormalAndRightHanded) {
    SplitMix rng(11);
    for (int i = 0; i < 200; ++i) {
        const Vec3 eye = random_vec(rng, 3.0);
        const Vec3 target = random_vec(rng);
        const Vec3 up = random_vec(rng);
        const Pose p = look_at(eye, target, up);
        EXPECT_LT((p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
        EXPECT_NEAR((p.forward() - (target - eye).normalized()).norm(), 0.0, 1e-12);
        EXPECT_NO_THROW(p.validate(1e-12));
    }
}

TEST(LookAt, DegenerateInputsThrow) {
    EXPECT_THROW(look_at(Vec3(1, 2, 3), Vec3(1, 2, 3), Vec3::UnitZ()), Error);
    EXPECT_THROW(look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitZ()), Error);
}

TEST(Rays, CenterPixelFollowsOpticalAxis) {
    const Pose pose = look_at(Vec3(1, 2, 3), Vec3(0, 0, 0), Vec3::UnitZ());
    const Camera cam = test_camera(5, 5, 1.0, pose);
    const Ray r = generate_ray(cam, 2, 2);
    EXPECT_NEAR((r.direction - pose.forward()).norm(), 0.0, 1e-12);
    EXPECT_NEAR((r.origin - pose.translation).norm(), 0.0, 0.0);
    EXPECT_DOUBLE_EQ(r.t_near, 1.0);
    EXPECT_DOUBLE_EQ(r.t_far, 3.0);
}

TEST(Rays, CornerPixelMatchesPinholeFormula) {
    // fov 90 degrees: focal = W / 2; pixel centers half a pixel inside the corners.
    const int w = 8;
    const Camera cam = test_camera(w, w, std::acos(-1.0) / 2.0, Pose::identity());
    const double f = w / 2.0;
    const double x = (0.5 - w / 2.0) / f;
    const double y = -(0.5 - w / 2.0) / f;
    const Vec3 expected = Vec3(x, y, -1.0).normalized();
    const Ray r = generate_ray(cam, 0, 0);
    EXPECT_NEAR((r.direction - expected).norm(), 0.0, 1e-14);
    const double angle = std::acos(r.direction.dot(Vec3(0, 0, -1)));
    EXPECT_NEAR(angle, std::atan(std::sqrt(x * x + y * y)), 1e-12);
}

TEST(Rays, FullGridHasUnitDirections) {
    const Camera cam = test_camera(4, 4, 0.9, look_at(Vec3(0, -3, 1), Vec3::Zero(), Vec3::UnitZ()));
    const auto rays = generate_rays(cam);
    ASSERT_EQ(rays.size(), 16u);
    for (const auto& r : rays) EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
    EXPECT_NEAR((rays[1 * 4 + 2].direction - generate_ray(cam, 2, 1).direction).norm(), 0.0, 0.0);
}

TEST(Rays, OutOfBoundsPixelThrows) {
    const Camera cam = test_camera(4, 3, 0.9, Pose::identity());
    EXPECT_THROW(generate_ray(cam, 4, 0), Error);
    EXPECT_THROW(generate_ray(cam, 0, 3), Error);
    EXPECT_THROW(generate_ray(cam, -1, 0), Error);
}

TEST(Project, OpticalAxisMapsToCenter) {
    Intrinsics intr = Intrinsics::from_fov(32, 24, 0.8);
    for (double d : {0.1, 1.0, 17.0}) {
        const Vec2 p = project(Vec3(0, 0, -d), intr);
        EXPECT_NEAR(p.norm(), 0.0, 1e-15);
    }
}

TEST(Project, FrustumEdgeMapsToUnitCoordinate) {
    const double fov = 0.9;
    const Intrinsics intr = Intrinsics::from_fov(40, 40, fov);
    const double z = 2.5;
    const double edge = z * std::tan(fov / 2.0);
    EXPECT_NEAR(project(Vec3(edge, 0, -z), intr).x(), 1.0, 1e-12);
    EXPECT_NEAR(project(Vec3(-edge, 0, -z), intr).x(), -1.0, 1e-12);
    // Image rows grow downward, so a point above the axis has negative P_y.
    EXPECT_NEAR(project(Vec3(0, edge, -z), intr).y(), -1.0, 1e-12);
}

TEST(Project, BehindCameraThrows) {
    const Intrinsics intr = Intrinsics::from_fov(8, 8, 0.9);
    EXPECT_THROW(project(Vec3(0, 0, 1), intr), Error);
    EXPECT_THROW(project(Vec3(0, 0, 0), intr), Error);
}

TEST(Project, RayRoundTripForEveryPixel) {
    const Pose pose = look_at(Vec3(2, -1, 1.5), Vec3(0.1, 0.2, 0.0), Vec3::UnitZ());
    const Camera cam = test_camera(9, 7, 1.1, pose);
    for (int j = 0; j < 7; ++j)
        for (int i = 0; i < 9; ++i) {
            const Ray r = generate_ray(cam, i, j);
            for (double t : {0.3, 1.7, 4.0}) {
                const Vec3 local = pose.inverse_apply(r.at(t));
                const Vec2 p = project(local, cam.intrinsics);
                EXPECT_NEAR((p - normalized_pixel(cam.intrinsics, i, j)).norm(), 0.0, 1e-10);
            }
        }
}

TEST(Contract, AffineDepthEndpoints) {
    const Intrinsics intr = Intrinsics::from_fov(16, 16, 0.8);
    const double tn = 1.0, tf = 3.0;
    EXPECT_NEAR(contract(Vec3(0, 0, -tn), intr, tn, tf).z(), -1.0, 1e-5);
    EXPECT_NEAR(contract(Vec3(0, 0, -tf), intr, tn, tf).z(), 1.0, 1e-5);
    const Vec3 mid = contract(Vec3(0, 0, -2.0), intr, tn, tf);
    EXPECT_NEAR(mid.norm(), 0.0, 1e-15);
}

TEST(Contract, UniformDepthsMapToUniformCoordinates) {
    const Intrinsics intr = Intrinsics::from_fov(16, 16, 0.8);
    const double tn = 0.5, tf = 4.5;
    double prev = -2.0;
    for (int k = 1; k < 10; ++k) {
        const double depth = tn + (tf - tn) * k / 10.0;
        const double z = contract(Vec3(0.1, -0.05, -depth), intr, tn, tf).z();
        EXPECT_NEAR(z, -1.0 + 2.0 * k / 10.0, 1e-12);
        EXPECT_GT(z, prev);
        prev = z;
    }
}

TEST(Contract, RejectPolicyThrowsOutsideBounds) {
    const Intrinsics intr = Intrinsics::from_fov(16, 16, 0.8);
    EXPECT_THROW(contract(Vec3(0, 0, -0.5), intr, 1.0, 3.0, DepthPolicy::reject), Error);
    EXPECT_THROW(contract(Vec3(0, 0, -3.5), intr, 1.0, 3.0, DepthPolicy::reject), Error);
    EXPECT_NO_THROW(contract(Vec3(0, 0, -2.0), intr, 1.0, 3.0, DepthPolicy::reject));
    EXPECT_NEAR(contract(Vec3(0, 0, -5.0), intr, 1.0, 3.0).z(), 1.0, 1e-5);
}

TEST(RelativePose, IdentityForSamePose) {
    const Pose a = look_at(Vec3(1, 2, 3), Vec3::Zero(), Vec3::UnitZ());
    const Pose r = relative_pose(a, a);
    EXPECT_LT((r.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(r.translation.norm(), 1e-12);
}

TEST(RelativePose, ComposesTransitively) {
    SplitMix rng(5);
    for (int i = 0; i < 50; ++i) {
        const Pose a = look_at(random_vec(rng, 3), random_vec(rng), random_vec(rng));
        const Pose b = look_at(random_vec(rng, 3), random_vec(rng), random_vec(rng));
        const Pose c = look_at(random_vec(rng, 3), random_vec(rng), random_vec(rng));
        const Pose ac = relative_pose(a, c);
        const Pose chained = compose(relative_pose(a, b), relative_pose(b, c));
        EXPECT_LT((chained.rotation - ac.rotation).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((chained.translation - ac.translation).norm(), 1e-10);
    }
}

TEST(RelativePose, TransfersPointsBetweenFrames) {
    Pose a;
    Pose b;
    b.translation = Vec3(1, 0, 0);
    const Pose r = relative_pose(a, b);
    EXPECT_LT((r.translation - Vec3(-1, 0, 0)).norm(), 1e-15);
    const Vec3 world(0.3, -0.2, 0.7);
    EXPECT_LT((r.apply(a.inverse_apply(world)) - b.inverse_apply(world)).norm(), 1e-15);
}

TEST(Spiral, PointsLieOnSphere) {
    const auto pts = archimedean_spiral(251, 2.5, 4.0);
    ASSERT_EQ(pts.size(), 251u);
    for (const auto& p : pts) EXPECT_NEAR(p.norm(), 2.5, 1e-12);
    EXPECT_GT(pts.front().z(), pts.back().z());
}

// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/checkpoint.hpp"
#include "nerfdiff/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace nerfdiff;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "nerfdiff_test_checkpoint";
    std::filesystem::create_directories(dir);
    return dir / name;
}

Camera reference_camera() {
    Camera cam;
    cam.intrinsics = Intrinsics::from_fov(24, 16, 0.7);
    cam.pose = look_at(Vec3(0.3, -2.1, 0.9), Vec3(0.01, 0.02, 0.0), Vec3::UnitZ());
    cam.t_near = 1.2345678901234;
    cam.t_far = 3.3;
    return cam;
}

} // namespace

TEST(Checkpoint, TensorArchiveRoundTrip) {
    std::vector<NamedTensor> tensors = {{"a", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"b.c", {1}, {-0.125f}}, {"empty", {0}, {}}};
    const auto path = temp_path("t.bin");
    write_checkpoint(path, tensors);
    const auto back = read_checkpoint(path);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(back[k].name, tensors[k].name);
        EXPECT_EQ(back[k].dims, tensors[k].dims);
        EXPECT_EQ(back[k].values, tensors[k].values);
    }
    // magic + version + count, then per tensor: name length, name, rank, dims, payload.
    EXPECT_EQ(std::filesystem::file_size(path), 12u + (4 + 1 + 4 + 8 + 24) + (4 + 3 + 4 + 4 + 4) + (4 + 5 + 4 + 4));
    EXPECT_THROW(find_tensor(back, "missing"), Error);
    EXPECT_EQ(find_tensor(back, "b.c").values[0], -0.125f);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto path = temp_path("bad.bin");
    std::ofstream(path, std::ios::binary) << "NOPE";
    EXPECT_THROW(read_checkpoint(path), Error);
    write_checkpoint(path, {{"a", {4}, {1, 2, 3, 4}}});
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    EXPECT_THROW(read_checkpoint(path), Error);
    EXPECT_THROW(write_checkpoint(path, {{"a", {3}, {1, 2}}}), Error);
}

TEST(Checkpoint, DoubleSplitIsExact) {
    const std::vector<double> values = {0.1, -1.0 / 3.0, 2.718281828459045, 1e-3, 123456.789};
    EXPECT_EQ(join_doubles(split_doubles(values)), values);
    EXPECT_THROW(join_doubles({1.0f, 2.0f}), Error);
}

TEST(Checkpoint, FieldRoundTripIsExact) {
    FieldConfig cfg;
    cfg.resolution = 8;
    cfg.channels = 6;
    cfg.hidden = 10;
    cfg.use_direction = true;
    cfg.direction_freqs = 2;
    const auto field = make_field<float>(cfg, reference_camera(), 17);
    const auto path = temp_path("field.bin");
    save_field(path, field);
    const auto back = load_field(path);
    EXPECT_EQ(back.config.resolution, 8);
    EXPECT_EQ(back.config.use_direction, true);
    EXPECT_EQ(back.config.direction_freqs, 2);
    EXPECT_EQ(back.reference.t_near, field.reference.t_near);
    EXPECT_EQ(back.reference.pose.rotation, field.reference.pose.rotation);
    EXPECT_EQ(back.reference.intrinsics.focal_x, field.reference.intrinsics.focal_x);
    EXPECT_EQ(back.triplane().yz.values, field.triplane().yz.values);
    EXPECT_EQ(back.mlp.layers[1].weight, field.mlp.layers[1].weight);
    EXPECT_EQ(back.mlp.layers[0].bias, field.mlp.layers[0].bias);
}

TEST(Checkpoint, PixelAlignedFieldRoundTrip) {
    FieldConfig cfg;
    cfg.conditioning = Conditioning::pixel_aligned;
    cfg.channels = 4;
    cfg.hidden = 8;
    cfg.use_posenc = true;
    cfg.position_freqs = 3;
    const auto field = make_field<float>(cfg, reference_camera(), 2);
    const auto path = temp_path("pixel.bin");
    save_field(path, field);
    const auto back = load_field(path);
    ASSERT_FALSE(back.is_triplane());
    EXPECT_EQ(back.pixel_features().values, field.pixel_features().values);
    EXPECT_EQ(back.config.position_freqs, 3);
}

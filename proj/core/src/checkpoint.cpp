// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/checkpoint.hpp"

#include "binary_io.hpp"
#include "nerfdiff/error.hpp"

#include <fstream>
#include <numeric>

namespace nerfdiff {

namespace {

constexpr std::uint32_t kVersion = 1;

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    detail::write_magic(out, "NFD1");
    detail::write_le<std::uint32_t>(out, kVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        NERFDIFF_CHECK(element_count(t.dims) == t.values.size(), "tensor " + t.name + ": payload does not match dims");
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) detail::write_le<std::uint32_t>(out, d);
        for (float v : t.values) detail::write_le<float>(out, v);
    }
    if (!out) throw Error("failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    detail::expect_magic(in, "NFD1");
    const auto version = detail::read_le<std::uint32_t>(in);
    NERFDIFF_CHECK(version == kVersion, "unsupported checkpoint version " + std::to_string(version));
    const auto count = detail::read_le<std::uint32_t>(in);
    std::vector<NamedTensor> tensors(count);
    for (auto& t : tensors) {
        const auto len = detail::read_le<std::uint32_t>(in);
        NERFDIFF_CHECK(len < (1u << 16), "implausible tensor name length");
        t.name.resize(len);
        in.read(t.name.data(), len);
        const auto rank = detail::read_le<std::uint32_t>(in);
        NERFDIFF_CHECK(rank <= 8, "implausible tensor rank");
        t.dims.resize(rank);
        for (auto& d : t.dims) d = detail::read_le<std::uint32_t>(in);
        t.values.resize(element_count(t.dims));
        for (auto& v : t.values) v = detail::read_le<float>(in);
    }
    return tensors;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw Error("checkpoint has no tensor named " + name);
}

std::vector<float> split_doubles(const std::vector<double>& values) {
    std::vector<float> out;
    out.reserve(3 * values.size());
    for (double v : values) {
        const auto hi = static_cast<float>(v);
        const auto mid = static_cast<float>(v - hi);
        const auto lo = static_cast<float>(v - hi - mid);
        out.insert(out.end(), {hi, mid, lo});
    }
    return out;
}

std::vector<double> join_doubles(const std::vector<float>& parts) {
    NERFDIFF_CHECK(parts.size() % 3 == 0, "split double payload must hold triples");
    std::vector<double> out(parts.size() / 3);
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = static_cast<double>(parts[3 * k]) + static_cast<double>(parts[3 * k + 1]) +
                 static_cast<double>(parts[3 * k + 2]);
    return out;
}

std::vector<NamedTensor> field_tensors(const FieldParams<float>& params) {
    const FieldConfig& c = params.config;
    std::vector<NamedTensor> out;
    out.push_back(
        {"config.field",
         {10},
         {static_cast<float>(c.conditioning == Conditioning::triplane ? 0 : 1), static_cast<float>(c.resolution),
          static_cast<float>(c.channels), static_cast<float>(c.hidden),
          static_cast<float>(c.hidden_activation == Activation::relu ? 0 : 1), static_cast<float>(c.use_direction),
          static_cast<float>(c.direction_freqs), static_cast<float>(c.use_posenc), static_cast<float>(c.position_freqs),
          static_cast<float>(c.init_feature_std)}});
    const Camera& ref = params.reference;
    std::vector<double> cam = {ref.intrinsics.focal_x,
                               ref.intrinsics.focal_y,
                               ref.intrinsics.center_x,
                               ref.intrinsics.center_y,
                               static_cast<double>(ref.intrinsics.width),
                               static_cast<double>(ref.intrinsics.height)};
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) cam.push_back(ref.pose.rotation(r, k));
    for (int k = 0; k < 3; ++k) cam.push_back(ref.pose.translation[k]);
    cam.push_back(ref.t_near);
    cam.push_back(ref.t_far);
    out.push_back({"config.reference", {static_cast<std::uint32_t>(cam.size()), 3}, split_doubles(cam)});
    for (const auto& v : parameter_views(params)) {
        NamedTensor t{v.name, {}, std::vector<float>(v.values.begin(), v.values.end())};
        for (int d : v.dims) t.dims.push_back(static_cast<std::uint32_t>(d));
        out.push_back(std::move(t));
    }
    return out;
}

FieldParams<float> field_from_tensors(const std::vector<NamedTensor>& tensors) {
    const auto& cfg = find_tensor(tensors, "config.field").values;
    NERFDIFF_CHECK(cfg.size() == 10, "config.field has the wrong length");
    FieldConfig c;
    c.conditioning = cfg[0] == 0.0f ? Conditioning::triplane : Conditioning::pixel_aligned;
    c.resolution = static_cast<int>(cfg[1]);
    c.channels = static_cast<int>(cfg[2]);
    c.hidden = static_cast<int>(cfg[3]);
    c.hidden_activation = cfg[4] == 0.0f ? Activation::relu : Activation::identity;
    c.use_direction = cfg[5] != 0.0f;
    c.direction_freqs = static_cast<int>(cfg[6]);
    c.use_posenc = cfg[7] != 0.0f;
    c.position_freqs = static_cast<int>(cfg[8]);
    c.init_feature_std = cfg[9];

    const auto cam = join_doubles(find_tensor(tensors, "config.reference").values);
    NERFDIFF_CHECK(cam.size() == 20, "config.reference has the wrong length");
    Camera ref;
    ref.intrinsics = {cam[0], cam[1], cam[2], cam[3], static_cast<int>(cam[4]), static_cast<int>(cam[5])};
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) ref.pose.rotation(r, k) = cam[6 + 3 * r + k];
    for (int k = 0; k < 3; ++k) ref.pose.translation[k] = cam[15 + k];
    ref.t_near = cam[18];
    ref.t_far = cam[19];

    FieldParams<float> params = make_field<float>(c, ref, 0);
    for (auto& v : parameter_views(params)) {
        const auto& t = find_tensor(tensors, v.name);
        NERFDIFF_CHECK(t.values.size() == v.values.size(), "tensor " + v.name + " has the wrong size");
        std::copy(t.values.begin(), t.values.end(), v.values.begin());
    }
    return params;
}

void save_field(const std::filesystem::path& path, const FieldParams<float>& params) {
    write_checkpoint(path, field_tensors(params));
}

FieldParams<float> load_field(const std::filesystem::path& path) { return field_from_tensors(read_checkpoint(path)); }

} // namespace nerfdiff

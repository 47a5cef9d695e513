// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace nerfdiff {

/// Row-major H x W x C image of doubles. Colors live in [0, 1]; diffusion
/// states reuse the same container with unbounded values.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<double> pixels;

    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0);

    std::size_t size() const { return pixels.size(); }
    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }

    double& at(int row, int col, int channel) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + channel];
    }
    double at(int row, int col, int channel) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + channel];
    }
};

/// Throws Error unless a and b have identical shapes.
void require_same_shape(const Image& a, const Image& b, const char* context);

/// Binary PPM (P6, maxval 255). Each value is mapped with round(255 * clamp(v, 0, 1)).
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// Raw float dump: magic "NFDI", u32 H, u32 W, u32 C, then H*W*C little-endian
/// float32 values in row-major order.
void write_float_image(const std::filesystem::path& path, const Image& image);
Image read_float_image(const std::filesystem::path& path);

/// Rounds every value to float32 precision (what a float dump round trip yields).
Image quantize_to_float(const Image& image);

} // namespace nerfdiff

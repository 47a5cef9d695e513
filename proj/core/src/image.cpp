// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/image.hpp"

#include "binary_io.hpp"
#include "nerfdiff/error.hpp"

#include <cmath>
#include <fstream>
#include <string>

namespace nerfdiff {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {
    NERFDIFF_CHECK(h >= 0 && w >= 0 && c >= 1, "invalid image shape");
}

void require_same_shape(const Image& a, const Image& b, const char* context) {
    if (!a.same_shape(b))
        throw Error(std::string(context) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                    std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " + std::to_string(b.height) +
                    "x" + std::to_string(b.width) + "x" + std::to_string(b.channels) + ")");
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    NERFDIFF_CHECK(image.channels == 3, "write_ppm: image must have 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::string bytes(image.pixels.size(), '\0');
    for (std::size_t k = 0; k < image.pixels.size(); ++k) {
        const double v = std::clamp(image.pixels[k], 0.0, 1.0);
        bytes[k] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v)));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (magic != "P6" || maxval != 255 || width <= 0 || height <= 0)
        throw Error(path.string() + ": unsupported PPM header");
    in.get();
    Image image(height, width, 3);
    std::string bytes(image.pixels.size(), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw Error(path.string() + ": truncated PPM payload");
    for (std::size_t k = 0; k < bytes.size(); ++k) image.pixels[k] = static_cast<unsigned char>(bytes[k]) / 255.0;
    return image;
}

void write_float_image(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    detail::write_magic(out, "NFDI");
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.height));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.width));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.channels));
    for (double v : image.pixels) detail::write_le<float>(out, static_cast<float>(v));
    if (!out) throw Error("failed writing " + path.string());
}

Image read_float_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    detail::expect_magic(in, "NFDI");
    const auto h = detail::read_le<std::uint32_t>(in);
    const auto w = detail::read_le<std::uint32_t>(in);
    const auto c = detail::read_le<std::uint32_t>(in);
    NERFDIFF_CHECK(h < (1u << 16) && w < (1u << 16) && c >= 1 && c < 64, path.string() + ": implausible image header");
    Image image(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (double& v : image.pixels) v = detail::read_le<float>(in);
    return image;
}

Image quantize_to_float(const Image& image) {
    Image out = image;
    for (double& v : out.pixels) v = static_cast<float>(v);
    return out;
}

} // namespace nerfdiff

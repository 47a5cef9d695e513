// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/metrics.hpp"

#include "nerfdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace nerfdiff {

double mse(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse");
    NERFDIFF_CHECK(a.size() > 0, "mse: empty image");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a.pixels[k] - b.pixels[k];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

Image to_luma(const Image& image) {
    if (image.channels == 1) return image;
    NERFDIFF_CHECK(image.channels == 3, "to_luma: expected 1 or 3 channels");
    Image out(image.height, image.width, 1);
    for (std::size_t p = 0; p < out.size(); ++p)
        out.pixels[p] = 0.299 * image.pixels[3 * p] + 0.587 * image.pixels[3 * p + 1] + 0.114 * image.pixels[3 * p + 2];
    return out;
}

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
    require_same_shape(a, b, "ssim");
    NERFDIFF_CHECK(cfg.window >= 1, "ssim: window must be positive");
    NERFDIFF_CHECK(a.height >= cfg.window && a.width >= cfg.window, "ssim: image smaller than the window");
    const Image x = to_luma(a);
    const Image y = to_luma(b);
    const int n = cfg.window;
    std::vector<double> kernel(static_cast<std::size_t>(n) * n);
    double total = 0.0;
    const double half = 0.5 * (n - 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double di = i - half;
            const double dj = j - half;
            const double g = std::exp(-(di * di + dj * dj) / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma));
            kernel[static_cast<std::size_t>(i * n + j)] = g;
            total += g;
        }
    for (double& g : kernel) g /= total;
    const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);

    double sum = 0.0;
    int count = 0;
    for (int r = 0; r + n <= x.height; ++r) {
        for (int c = 0; c + n <= x.width; ++c) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = kernel[static_cast<std::size_t>(i * n + j)];
                    const double vx = x.at(r + i, c + j, 0);
                    const double vy = y.at(r + i, c + j, 0);
                    mx += g * vx;
                    my += g * vy;
                    sxx += g * vx * vx;
                    syy += g * vy * vy;
                    sxy += g * vx * vy;
                }
            const double vx = sxx - mx * mx;
            const double vy = syy - my * my;
            const double cov = sxy - mx * my;
            sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return sum / count;
}

ConsistencySummary cross_view_consistency(const std::vector<Image>& renders, const std::vector<Image>& truth) {
    NERFDIFF_CHECK(renders.size() == truth.size(), "cross_view_consistency: render and truth counts differ");
    NERFDIFF_CHECK(!renders.empty(), "cross_view_consistency: no views");
    ConsistencySummary s;
    s.min_psnr = std::numeric_limits<double>::infinity();
    s.min_ssim = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < renders.size(); ++k) {
        ViewMetrics m{static_cast<int>(k), psnr(renders[k], truth[k]), ssim(renders[k], truth[k])};
        s.mean_psnr += m.psnr_db;
        s.mean_ssim += m.ssim;
        if (m.psnr_db < s.min_psnr) {
            s.min_psnr = m.psnr_db;
            s.min_psnr_view = m.view_index;
        }
        s.min_ssim = std::min(s.min_ssim, m.ssim);
        s.views.push_back(m);
    }
    s.mean_psnr /= static_cast<double>(renders.size());
    s.mean_ssim /= static_cast<double>(renders.size());
    return s;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<ViewMetrics>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "view_index,psnr_db,ssim\n";
    char line[96];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", r.view_index, r.psnr_db, r.ssim);
        out << line;
    }
}

} // namespace nerfdiff

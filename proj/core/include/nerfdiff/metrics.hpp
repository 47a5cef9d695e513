// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/image.hpp"

#include <filesystem>
#include <vector>

namespace nerfdiff {

/// 10 log10(1 / MSE) for images in [0, 1]; +infinity when the images match.
double psnr(const Image& a, const Image& b);

/// Mean squared difference over all values.
double mse(const Image& a, const Image& b);

/// Luma (0.299 R + 0.587 G + 0.114 B) for 3-channel images, the channel itself
/// for 1-channel images.
Image to_luma(const Image& image);

struct SsimConfig {
    int window = 11;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean SSIM over all window positions fully inside the image (computed on
/// luma). Throws Error when the image is smaller than the window.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

struct ViewMetrics {
    int view_index = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct ConsistencySummary {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double min_psnr = 0.0;
    int min_psnr_view = 0;
    double mean_ssim = 0.0;
    double min_ssim = 0.0;
};

/// Per-view PSNR / SSIM of renders against ground truth plus aggregates.
/// The mean PSNR is +infinity if any view matches exactly.
ConsistencySummary cross_view_consistency(const std::vector<Image>& renders, const std::vector<Image>& truth);

/// CSV with header view_index,psnr_db,ssim.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<ViewMetrics>& rows);

} // namespace nerfdiff

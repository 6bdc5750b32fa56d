// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Overlay rendering: the initial seed as a red square, the seed-only box in
// yellow, the final box in purple, and a heatmap of inverse degrees.
// Requires OpenCV.

#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lostkit/commands.hpp"
#include "lostkit/lost.hpp"
#include "lostkit/patchgraph.hpp"

namespace lostkit {

namespace detail {

inline cv::Rect to_rect(const PixelBox& b) {
    return cv::Rect(cv::Point(int(b.x_min), int(b.y_min)), cv::Point(int(b.x_max), int(b.y_max)));
}

}  // namespace detail

inline cv::Mat render_overlay(const cv::Mat& image, const Localization& loc, const ImageManifest& manifest) {
    cv::Mat out = image.clone();
    const int thickness = std::max(2, std::min(image.cols, image.rows) / 150);
    const auto P = manifest.patch_size;
    const std::uint32_t p = loc.seeds.initial;
    const PatchExtent seed{p / loc.mask.grid_w, p % loc.mask.grid_w, p / loc.mask.grid_w, p % loc.mask.grid_w};
    const PixelBox seed_px = unclipped_pixel_box(seed, P);
    cv::rectangle(out, detail::to_rect(seed_px), cv::Scalar(0, 0, 255), cv::FILLED);  // BGR red
    cv::rectangle(out, detail::to_rect(loc.seed_only_box), cv::Scalar(0, 255, 255), thickness);
    cv::rectangle(out, detail::to_rect(loc.box), cv::Scalar(255, 0, 160), thickness);
    return out;
}

/// Inverse degrees scaled to [0, 255] and colour mapped: low degree = yellow.
inline cv::Mat render_inverse_degree(const DegreeMap& dm, const ImageManifest& manifest) {
    const auto field = inverse_degree_field(dm);
    const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
    const double span = *hi - *lo;
    cv::Mat grid(int(dm.grid_h), int(dm.grid_w), CV_8UC1);
    for (std::size_t i = 0; i < field.size(); ++i) {
        const double t = span > 0 ? (field[i] - *lo) / span : 1.0;
        grid.at<std::uint8_t>(int(i / dm.grid_w), int(i % dm.grid_w)) = cv::saturate_cast<std::uint8_t>(255.0 * t);
    }
    cv::Mat padded;
    cv::resize(grid, padded, cv::Size(int(manifest.pad_w), int(manifest.pad_h)), 0, 0, cv::INTER_NEAREST);
    cv::Mat colored;
    cv::applyColorMap(padded(cv::Rect(0, 0, int(manifest.image_w), int(manifest.image_h))), colored,
                      cv::COLORMAP_VIRIDIS);
    return colored;
}

namespace cli {

inline std::filesystem::path find_image(const RunConfig& cfg, const detail::LoadedImage& img) {
    if (img.manifest.feature_files.count("image")) return detail::role_path(cfg, img, "image");
    for (const char* ext : {".jpg", ".jpeg", ".png", ".JPEG", ".JPG"}) {
        const auto p = cfg.image_root / (img.manifest.image_id + ext);
        if (std::filesystem::exists(p)) return p;
    }
    throw Error(Errc::io_failure, img.manifest.image_id + ": no source image under " + cfg.image_root.string());
}

/// Writes <out>/<id>_overlay.png and <out>/<id>_heatmap.png per image.
inline std::vector<std::filesystem::path> cmd_render(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
    const auto dataset = read_dataset_manifest(cfg.dataset);
    std::vector<std::filesystem::path> written;
    for (const auto& entry : dataset.images) {
        const auto img = detail::load_image(dataset, entry);
        const auto features = detail::load_feature_set(cfg, img);
        const auto loc = localize_detailed(features, img.manifest, LocalizeOptions{cfg.k, cfg.mode, cfg.threads});
        const auto path = find_image(cfg, img);
        const cv::Mat image = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (image.empty()) throw Error(Errc::io_failure, "cannot decode " + path.string());
        if (image.cols != int(img.manifest.image_w) || image.rows != int(img.manifest.image_h)) {
            throw Error(Errc::geometry_mismatch, img.manifest.image_id + ": image size differs from manifest");
        }
        const auto overlay = cfg.out / (img.manifest.image_id + "_overlay.png");
        const auto heatmap = cfg.out / (img.manifest.image_id + "_heatmap.png");
        if (!cv::imwrite(overlay.string(), render_overlay(image, loc, img.manifest)) ||
            !cv::imwrite(heatmap.string(), render_inverse_degree(loc.degrees, img.manifest))) {
            throw Error(Errc::io_failure, "cannot write overlays for " + img.manifest.image_id);
        }
        written.push_back(overlay);
        written.push_back(heatmap);
    }
    return written;
}

}  // namespace cli
}  // namespace lostkit

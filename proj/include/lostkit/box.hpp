// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>

namespace lostkit {

/// Half-open pixel rectangle [x_min, x_max) x [y_min, y_max) in original
/// image coordinates.
struct PixelBox {
    double x_min = 0;
    double y_min = 0;
    double x_max = 0;
    double y_max = 0;
    double score = 1.0;
    std::optional<int> label;  // pseudo-label (cluster id)

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool empty() const { return !(x_min < x_max && y_min < y_max); }

    bool contains(const PixelBox& other) const {
        return x_min <= other.x_min && y_min <= other.y_min && other.x_max <= x_max &&
               other.y_max <= y_max;
    }

    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline PixelBox make_box(double x_min, double y_min, double x_max, double y_max, double score = 1.0) {
    PixelBox b;
    b.x_min = x_min;
    b.y_min = y_min;
    b.x_max = x_max;
    b.y_max = y_max;
    b.score = score;
    return b;
}

/// One predicted box for one image. `category` is filled only once a
/// pseudo-label has been mapped to a ground-truth class name.
struct Detection {
    std::string image_id;
    PixelBox box;
    std::optional<std::string> category;
    std::optional<std::uint32_t> seed;  // initial seed patch, when produced by LOST
    std::string method;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Intersection over union of two half-open boxes; 0 when the union is empty.
inline double iou(const PixelBox& a, const PixelBox& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace lostkit

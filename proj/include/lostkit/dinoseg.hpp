// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Attention-map baseline: keep the floor(0.6 N) largest CLS-attention
// entries of a head, take the largest 4-connected component, box it.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "lostkit/box.hpp"
#include "lostkit/error.hpp"
#include "lostkit/lost.hpp"
#include "lostkit/tensorio.hpp"

namespace lostkit {

inline constexpr std::uint32_t kDefaultHead = 4;

struct HeadSelection {
    enum class Strategy { fixed, bcc, haiou };

    Strategy strategy = Strategy::fixed;
    std::uint32_t head = kDefaultHead;

    static constexpr HeadSelection fixed(std::uint32_t h) { return {Strategy::fixed, h}; }
    static constexpr HeadSelection bcc() { return {Strategy::bcc, 0}; }
    static constexpr HeadSelection haiou() { return {Strategy::haiou, 0}; }
};

inline HeadSelection parse_head_selection(std::string_view text) {
    if (text == "bcc") return HeadSelection::bcc();
    if (text == "haiou") return HeadSelection::haiou();
    std::uint32_t head = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), head);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw Error(Errc::invalid_argument, "head must be an index, 'bcc' or 'haiou'");
    }
    return HeadSelection::fixed(head);
}

/// Number of entries kept by the binarization: floor(0.6 N), in integers.
constexpr std::size_t kept_entries(std::size_t n) { return (6 * n) / 10; }

/// Marks exactly floor(0.6 N) entries, by descending value then ascending index.
inline PatchMask binarize_top_fraction(std::span<const float> values, std::uint32_t grid_h,
                                       std::uint32_t grid_w) {
    const std::size_t n = values.size();
    const std::size_t t = kept_entries(n);
    if (t == 0) throw Error(Errc::empty_mask, "fewer than two patches: nothing to keep");
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(t), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          return values[a] > values[b] || (values[a] == values[b] && a < b);
                      });
    PatchMask mask{grid_h, grid_w, std::vector<bool>(n, false)};
    for (std::size_t i = 0; i < t; ++i) mask.bits[order[i]] = true;
    return mask;
}

struct HeadBox {
    std::uint32_t head = 0;
    PixelBox box;
    std::size_t component_size = 0;
};

inline HeadBox head_box_detailed(const AttentionStack& att, std::uint32_t head,
                                 const ImageManifest& manifest) {
    if (head >= att.heads) {
        throw Error(Errc::index_out_of_range, "head " + std::to_string(head) + " but stack has " +
                                                   std::to_string(att.heads) + " heads");
    }
    check_geometry(manifest, att.grid_h, att.grid_w);
    const auto mask = binarize_top_fraction(att.head(head), att.grid_h, att.grid_w);
    const auto components = connected_components(mask);
    // Components come ordered by smallest index, so strict > keeps the earliest on ties.
    std::size_t best = 0;
    for (std::size_t i = 1; i < components.size(); ++i) {
        if (components[i].size() > components[best].size()) best = i;
    }
    HeadBox out;
    out.head = head;
    out.component_size = components[best].size();
    out.box = extent_to_pixels(patch_extent(components[best], att.grid_w), manifest);
    return out;
}

inline PixelBox head_box(const AttentionStack& att, std::uint32_t head, const ImageManifest& manifest) {
    return head_box_detailed(att, head, manifest).box;
}

inline HeadBox select_head_box_detailed(const AttentionStack& att, const ImageManifest& manifest,
                                        HeadSelection sel) {
    validate(att);
    if (sel.strategy == HeadSelection::Strategy::fixed) return head_box_detailed(att, sel.head, manifest);

    std::vector<HeadBox> boxes;
    boxes.reserve(att.heads);
    for (std::uint32_t h = 0; h < att.heads; ++h) boxes.push_back(head_box_detailed(att, h, manifest));

    if (sel.strategy == HeadSelection::Strategy::bcc) {
        std::size_t best = 0;
        for (std::size_t h = 1; h < boxes.size(); ++h) {
            if (boxes[h].component_size > boxes[best].component_size) best = h;
        }
        return boxes[best];
    }

    // haiou: highest mean IoU against the other heads' boxes.
    if (boxes.size() == 1) return boxes[0];
    std::size_t best = 0;
    double best_mean = -1.0;
    for (std::size_t h = 0; h < boxes.size(); ++h) {
        double sum = 0.0;
        for (std::size_t o = 0; o < boxes.size(); ++o) {
            if (o != h) sum += iou(boxes[h].box, boxes[o].box);
        }
        const double mean = sum / double(boxes.size() - 1);
        if (mean > best_mean) {
            best_mean = mean;
            best = h;
        }
    }
    return boxes[best];
}

inline PixelBox select_head_box(const AttentionStack& att, const ImageManifest& manifest, HeadSelection sel) {
    return select_head_box_detailed(att, manifest, sel).box;
}

}  // namespace lostkit

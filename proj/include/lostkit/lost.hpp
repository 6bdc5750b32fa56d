// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Single-object localization from patch features.
//
//   1. initial seed p*: the patch with the lowest degree in the similarity graph
//   2. expansion: D_k = the k lowest-degree patches, S = {q in D_k : aff(q, p*) >= 0}
//   3. mask: m_q = [sum_{s in S} aff(q, s) >= 0]
//   4. box: bounding box of the 4-connected component of m containing p*
//
// Ties are broken by ascending linear patch index everywhere, which makes the
// whole pipeline a pure function of its inputs.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lostkit/box.hpp"
#include "lostkit/error.hpp"
#include "lostkit/patchgraph.hpp"
#include "lostkit/tensorio.hpp"

namespace lostkit {

inline constexpr std::uint32_t kDefaultExpansionBudget = 100;

struct SeedSet {
    std::uint32_t initial = 0;
    std::uint32_t expansion_budget = 0;   // k as requested
    std::vector<std::uint32_t> candidates;  // D_k in (degree, index) order
    std::vector<std::uint32_t> seeds;       // S, ascending index
    bool budget_clamped = false;            // k > N

    friend bool operator==(const SeedSet&, const SeedSet&) = default;
};

struct PatchMask {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<bool> bits;

    std::size_t patch_count() const { return bits.size(); }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true)); }

    friend bool operator==(const PatchMask&, const PatchMask&) = default;
};

/// Inclusive patch-grid extent of a set of patches.
struct PatchExtent {
    std::uint32_t row_min = 0;
    std::uint32_t col_min = 0;
    std::uint32_t row_max = 0;
    std::uint32_t col_max = 0;

    friend bool operator==(const PatchExtent&, const PatchExtent&) = default;
};

// ---------------------------------------------------------------------------

inline std::uint32_t select_seed(const DegreeMap& dm) {
    if (dm.degrees.empty()) throw Error(Errc::invariant_violation, "empty degree map");
    // min_element returns the first minimum, i.e. the smallest index among ties.
    return static_cast<std::uint32_t>(
        std::min_element(dm.degrees.begin(), dm.degrees.end()) - dm.degrees.begin());
}

inline SeedSet expand_seed(const PatchAffinity& affinity, const DegreeMap& dm, std::uint32_t p_star,
                           std::uint32_t k) {
    const std::size_t n = dm.patch_count();
    if (k < 1) throw Error(Errc::invalid_argument, "expansion budget k must be >= 1");
    if (p_star >= n) throw Error(Errc::index_out_of_range, "seed index outside the grid");
    if (affinity.patch_count() != n) throw Error(Errc::geometry_mismatch, "degree map and features differ");

    SeedSet set;
    set.initial = p_star;
    set.expansion_budget = k;
    set.budget_clamped = k > n;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return dm.degrees[a] < dm.degrees[b]; });
    order.resize(std::min<std::size_t>(k, n));
    set.candidates = order;

    for (std::uint32_t q : order) {
        if (affinity(q, p_star) >= 0.0) set.seeds.push_back(q);
    }
    // In dot-sign mode p* always passes its own test; the symmetrized
    // query/key product can be negative on the diagonal, so keep p* explicitly.
    if (std::find(set.seeds.begin(), set.seeds.end(), p_star) == set.seeds.end()) {
        set.seeds.push_back(p_star);
    }
    std::sort(set.seeds.begin(), set.seeds.end());
    return set;
}

inline PatchMask build_mask(const PatchAffinity& affinity, const SeedSet& seeds) {
    if (seeds.seeds.empty()) throw Error(Errc::invalid_argument, "empty seed set");
    const std::size_t n = affinity.patch_count();
    PatchMask mask{affinity.grid_h(), affinity.grid_w(), std::vector<bool>(n, false)};
    for (std::size_t q = 0; q < n; ++q) {
        double sum = 0.0;
        for (std::uint32_t s : seeds.seeds) sum += affinity(q, s);
        mask.bits[q] = sum >= 0.0;
    }
    return mask;
}

namespace detail {

inline std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t x) {
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

}  // namespace detail

/// 4-connected components of the true bits. Each component is sorted
/// ascending and components are ordered by their smallest index.
inline std::vector<std::vector<std::uint32_t>> connected_components(const PatchMask& mask) {
    const std::uint32_t h = mask.grid_h;
    const std::uint32_t w = mask.grid_w;
    if (std::size_t{h} * w != mask.bits.size()) {
        throw Error(Errc::geometry_mismatch, "mask size disagrees with its grid");
    }
    const std::uint32_t n = h * w;

    // Two-pass labeling with union-find over west/north neighbours; the root
    // of each set is kept at its smallest member.
    std::vector<std::uint32_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0u);
    auto unite = [&](std::uint32_t a, std::uint32_t b) {
        a = detail::find_root(parent, a);
        b = detail::find_root(parent, b);
        if (a == b) return;
        if (a < b) parent[b] = a;
        else parent[a] = b;
    };
    for (std::uint32_t r = 0; r < h; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            const std::uint32_t p = r * w + c;
            if (!mask.bits[p]) continue;
            if (c > 0 && mask.bits[p - 1]) unite(p, p - 1);
            if (r > 0 && mask.bits[p - w]) unite(p, p - w);
        }
    }

    std::vector<std::vector<std::uint32_t>> components;
    std::vector<std::int64_t> slot(n, -1);
    for (std::uint32_t p = 0; p < n; ++p) {
        if (!mask.bits[p]) continue;
        const auto root = detail::find_root(parent, p);
        if (slot[root] < 0) {
            slot[root] = static_cast<std::int64_t>(components.size());
            components.emplace_back();
        }
        components[static_cast<std::size_t>(slot[root])].push_back(p);
    }
    return components;
}

inline PatchExtent patch_extent(std::span<const std::uint32_t> patches, std::uint32_t grid_w) {
    if (patches.empty()) throw Error(Errc::invalid_argument, "extent of an empty patch set");
    PatchExtent e{UINT32_MAX, UINT32_MAX, 0, 0};
    for (std::uint32_t p : patches) {
        const std::uint32_t r = p / grid_w;
        const std::uint32_t c = p % grid_w;
        e.row_min = std::min(e.row_min, r);
        e.row_max = std::max(e.row_max, r);
        e.col_min = std::min(e.col_min, c);
        e.col_max = std::max(e.col_max, c);
    }
    return e;
}

/// Pixel footprint of a patch extent before clipping to the image.
inline PixelBox unclipped_pixel_box(const PatchExtent& e, std::uint32_t patch_size) {
    const double P = patch_size;
    return make_box(e.col_min * P, e.row_min * P, (e.col_max + 1) * P, (e.row_max + 1) * P);
}

/// Maps a patch extent to original-image pixels, clipping away the padding.
inline PixelBox extent_to_pixels(const PatchExtent& e, const ImageManifest& manifest) {
    PixelBox box = unclipped_pixel_box(e, manifest.patch_size);
    box.x_max = std::min<double>(box.x_max, manifest.image_w);
    box.y_max = std::min<double>(box.y_max, manifest.image_h);
    if (box.empty()) {
        throw Error(Errc::degenerate_box,
                    manifest.image_id + ": component lies entirely inside the padding");
    }
    return box;
}

inline PixelBox extract_box(const PatchMask& mask, std::uint32_t p_star, const ImageManifest& manifest) {
    check_geometry(manifest, mask.grid_h, mask.grid_w);
    if (p_star >= mask.patch_count()) throw Error(Errc::index_out_of_range, "seed index outside the grid");
    if (!mask.bits[p_star]) {
        throw Error(Errc::invariant_violation, manifest.image_id + ": seed patch not in mask");
    }
    for (const auto& component : connected_components(mask)) {
        if (std::binary_search(component.begin(), component.end(), p_star)) {
            return extent_to_pixels(patch_extent(component, mask.grid_w), manifest);
        }
    }
    throw Error(Errc::invariant_violation, "seed patch missing from every component");
}

// ---------------------------------------------------------------------------

struct LocalizeOptions {
    std::uint32_t k = kDefaultExpansionBudget;
    SimilarityMode mode = SimilarityMode::dot(FeatureKind::key);
    unsigned threads = 1;
};

/// Everything the pipeline computed for one image, for rendering and debugging.
struct Localization {
    DegreeMap degrees;
    SeedSet seeds;
    PatchMask mask;
    std::vector<std::uint32_t> component;  // the component containing p*
    PixelBox box;
    PixelBox seed_only_box;  // box obtained with S = {p*}
};

inline Localization localize_detailed(const PatchAffinity& affinity, const ImageManifest& manifest,
                                      std::uint32_t k = kDefaultExpansionBudget, unsigned threads = 1) {
    check_geometry(manifest, affinity.grid_h(), affinity.grid_w());

    Localization out;
    out.degrees = degree_map(affinity, threads);
    const auto p_star = select_seed(out.degrees);
    out.seeds = expand_seed(affinity, out.degrees, p_star, k);
    out.mask = build_mask(affinity, out.seeds);
    // See expand_seed: only the symmetrized product can leave p* out of m.
    if (!out.mask.bits[p_star]) out.mask.bits[p_star] = true;

    for (auto& component : connected_components(out.mask)) {
        if (std::binary_search(component.begin(), component.end(), p_star)) {
            out.component = std::move(component);
            break;
        }
    }
    out.box = extract_box(out.mask, p_star, manifest);

    SeedSet single = out.seeds;
    single.seeds = {p_star};
    auto seed_mask = build_mask(affinity, single);
    seed_mask.bits[p_star] = true;
    out.seed_only_box = extract_box(seed_mask, p_star, manifest);
    return out;
}

inline Localization localize_detailed(const FeatureSet& features, const ImageManifest& manifest,
                                      const LocalizeOptions& options = {}) {
    return localize_detailed(PatchAffinity::from(features, options.mode), manifest, options.k,
                             options.threads);
}

inline PixelBox localize(const PatchAffinity& affinity, const ImageManifest& manifest,
                         std::uint32_t k = kDefaultExpansionBudget, unsigned threads = 1) {
    check_geometry(manifest, affinity.grid_h(), affinity.grid_w());
    const auto degrees = degree_map(affinity, threads);
    const auto p_star = select_seed(degrees);
    const auto seeds = expand_seed(affinity, degrees, p_star, k);
    auto mask = build_mask(affinity, seeds);
    if (!mask.bits[p_star]) mask.bits[p_star] = true;
    return extract_box(mask, p_star, manifest);
}

inline PixelBox localize(const FeatureSet& features, const ImageManifest& manifest,
                         const LocalizeOptions& options = {}) {
    return localize(PatchAffinity::from(features, options.mode), manifest, options.k, options.threads);
}

inline PixelBox localize(const FeatureMap& features, const ImageManifest& manifest,
                         std::uint32_t k = kDefaultExpansionBudget) {
    return localize(PatchAffinity::dot(features), manifest, k);
}

}  // namespace lostkit

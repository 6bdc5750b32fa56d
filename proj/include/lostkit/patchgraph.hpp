// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Binary patch-similarity graph and patch degrees.
//
// Two patches p, q are adjacent when their affinity is non-negative:
//   dot-sign:  f_p . f_q >= 0               (f = keys, queries or values)
//   sym-qk:    q_p . k_q + k_p . q_q >= 0   (symmetrized query/key product)
// Self-edges are counted, so every degree is in [1, N].

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "lostkit/error.hpp"
#include "lostkit/tensorio.hpp"

namespace lostkit {

struct SimilarityMode {
    enum class Variant { dot_sign, sym_qk };

    Variant variant = Variant::dot_sign;
    FeatureKind kind = FeatureKind::key;  // only meaningful for dot_sign

    static constexpr SimilarityMode dot(FeatureKind k) { return {Variant::dot_sign, k}; }
    static constexpr SimilarityMode sym_qk() { return {Variant::sym_qk, FeatureKind::key}; }

    friend bool operator==(const SimilarityMode&, const SimilarityMode&) = default;
};

inline std::string to_string(const SimilarityMode& mode) {
    if (mode.variant == SimilarityMode::Variant::sym_qk) return "sym-qk";
    return std::string(to_string(mode.kind));
}

inline SimilarityMode parse_similarity_mode(std::string_view text) {
    if (text == "key") return SimilarityMode::dot(FeatureKind::key);
    if (text == "query") return SimilarityMode::dot(FeatureKind::query);
    if (text == "value") return SimilarityMode::dot(FeatureKind::value);
    if (text == "sym-qk") return SimilarityMode::sym_qk();
    throw Error(Errc::invalid_argument, "unknown similarity mode '" + std::string(text) + "'");
}

/// The feature maps available for one image, by kind.
struct FeatureSet {
    std::optional<FeatureMap> key;
    std::optional<FeatureMap> query;
    std::optional<FeatureMap> value;

    const std::optional<FeatureMap>& get(FeatureKind kind) const {
        switch (kind) {
            case FeatureKind::query: return query;
            case FeatureKind::value: return value;
            default: return key;
        }
    }
};

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
    // Float products are exact in double; the sum runs in index order.
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

}  // namespace detail

/// Pairwise patch affinity under a similarity mode. Non-owning: the feature
/// maps must outlive the object.
class PatchAffinity {
public:
    static PatchAffinity dot(const FeatureMap& features) {
        validate(features);
        return PatchAffinity(&features, nullptr);
    }

    static PatchAffinity sym_qk(const FeatureMap& query, const FeatureMap& key) {
        validate(query);
        validate(key);
        if (query.grid_h != key.grid_h || query.grid_w != key.grid_w || query.dim != key.dim) {
            throw Error(Errc::geometry_mismatch, "query and key maps differ in geometry");
        }
        return PatchAffinity(&query, &key);
    }

    static PatchAffinity from(const FeatureSet& set, SimilarityMode mode) {
        if (mode.variant == SimilarityMode::Variant::sym_qk) {
            if (!set.query || !set.key) {
                throw Error(Errc::missing_feature_file, "sym-qk needs both query and key maps");
            }
            return sym_qk(*set.query, *set.key);
        }
        const auto& fm = set.get(mode.kind);
        if (!fm) {
            throw Error(Errc::missing_feature_file,
                        "no " + std::string(to_string(mode.kind)) + " feature map");
        }
        return dot(*fm);
    }

    std::uint32_t grid_h() const { return primary_->grid_h; }
    std::uint32_t grid_w() const { return primary_->grid_w; }
    std::size_t patch_count() const { return primary_->patch_count(); }
    bool symmetrized() const { return key_ != nullptr; }

    /// f_p . f_q, or q_p . k_q + k_p . q_q in sym-qk mode. Exactly symmetric.
    double operator()(std::size_t p, std::size_t q) const {
        if (key_ == nullptr) return detail::dot(primary_->patch(p), primary_->patch(q));
        return detail::dot(primary_->patch(p), key_->patch(q)) +
               detail::dot(key_->patch(p), primary_->patch(q));
    }

private:
    PatchAffinity(const FeatureMap* primary, const FeatureMap* key) : primary_(primary), key_(key) {}

    const FeatureMap* primary_;  // features, or queries in sym-qk mode
    const FeatureMap* key_;
};

struct DegreeMap {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<std::uint32_t> degrees;

    std::size_t patch_count() const { return degrees.size(); }

    friend bool operator==(const DegreeMap&, const DegreeMap&) = default;
};

inline bool similarity_sign(const PatchAffinity& affinity, std::size_t p, std::size_t q) {
    const auto n = affinity.patch_count();
    if (p >= n || q >= n) {
        throw Error(Errc::index_out_of_range, "patch index " + std::to_string(std::max(p, q)) +
                                                   " outside [0, " + std::to_string(n) + ")");
    }
    return affinity(p, q) >= 0.0;
}

/// Streams the upper triangle of the adjacency matrix without storing it.
/// Rows are split across `threads` workers, each with private counters that
/// are summed afterwards, so the result does not depend on scheduling.
inline DegreeMap degree_map(const PatchAffinity& affinity, unsigned threads = 1) {
    const std::size_t n = affinity.patch_count();
    DegreeMap dm{affinity.grid_h(), affinity.grid_w(), std::vector<std::uint32_t>(n, 0)};

    auto accumulate_rows = [&](std::size_t row_begin, std::size_t row_end,
                               std::vector<std::uint32_t>& counts) {
        for (std::size_t p = row_begin; p < row_end; ++p) {
            if (affinity(p, p) >= 0.0) ++counts[p];
            for (std::size_t q = p + 1; q < n; ++q) {
                if (affinity(p, q) >= 0.0) {
                    ++counts[p];
                    ++counts[q];
                }
            }
        }
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (threads == 1) {
        accumulate_rows(0, n, dm.degrees);
        return dm;
    }

    // Balance the triangle: row p costs about n - p pair evaluations.
    std::vector<std::size_t> bounds{0};
    const double total = double(n) * double(n + 1) / 2.0;
    double acc = 0;
    for (std::size_t p = 0; p < n && bounds.size() < threads; ++p) {
        acc += double(n - p);
        if (acc >= total * double(bounds.size()) / threads) bounds.push_back(p + 1);
    }
    bounds.push_back(n);

    std::vector<std::vector<std::uint32_t>> partial(bounds.size() - 1, std::vector<std::uint32_t>(n, 0));
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t + 1 < bounds.size(); ++t) {
            pool.emplace_back([&, t] { accumulate_rows(bounds[t], bounds[t + 1], partial[t]); });
        }
    }
    for (const auto& counts : partial) {
        for (std::size_t p = 0; p < n; ++p) dm.degrees[p] += counts[p];
    }
    return dm;
}

inline DegreeMap degree_map(const FeatureSet& features, SimilarityMode mode, unsigned threads = 1) {
    return degree_map(PatchAffinity::from(features, mode), threads);
}

/// Dense N x N adjacency (row-major, 0/1). Debug path; O(N^2) memory.
inline std::vector<std::uint8_t> adjacency_matrix(const PatchAffinity& affinity) {
    const std::size_t n = affinity.patch_count();
    std::vector<std::uint8_t> a(n * n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) a[p * n + q] = affinity(p, q) >= 0.0 ? 1 : 0;
    }
    return a;
}

inline DegreeMap degree_map_dense(const PatchAffinity& affinity) {
    const std::size_t n = affinity.patch_count();
    const auto a = adjacency_matrix(affinity);
    DegreeMap dm{affinity.grid_h(), affinity.grid_w(), std::vector<std::uint32_t>(n, 0)};
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) dm.degrees[p] += a[p * n + q];
    }
    return dm;
}

/// 1 / d_p per patch, for heatmap rendering. A zero degree (possible only in
/// sym-qk mode, which has no guaranteed self-edge) is treated as 1.
inline std::vector<double> inverse_degree_field(const DegreeMap& dm) {
    std::vector<double> field(dm.degrees.size());
    std::transform(dm.degrees.begin(), dm.degrees.end(), field.begin(),
                   [](std::uint32_t d) { return 1.0 / double(std::max<std::uint32_t>(d, 1)); });
    return field;
}

}  // namespace lostkit

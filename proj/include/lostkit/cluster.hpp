// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Pseudo-labeling of discovered boxes: K-means over crop descriptors,
// Hungarian matching of clusters to ground-truth classes (reporting only),
// and cosine-similarity image retrieval.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lostkit/box.hpp"
#include "lostkit/datasets.hpp"
#include "lostkit/error.hpp"
#include "lostkit/evalmetrics.hpp"
#include "lostkit/tensorio.hpp"

namespace lostkit {

// ---------------------------------------------------------------------------
// K-means

struct KMeansOptions {
    std::size_t max_iterations = 300;
    double tolerance = 1e-4;  // relative inertia change
};

struct ClusterModel {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<std::vector<double>> centroids;
    std::vector<std::string> image_ids;    // input order
    std::vector<std::uint32_t> labels;     // input order
    double inertia = 0.0;
    std::vector<double> inertia_history;   // after each assignment step
    std::uint64_t seed = 0;

    std::map<std::string, std::uint32_t> assignments() const {
        std::map<std::string, std::uint32_t> out;
        for (std::size_t i = 0; i < image_ids.size(); ++i) out[image_ids[i]] = labels[i];
        return out;
    }
};

namespace detail {

/// Uniform double in [0, 1) from the raw generator output, so results do not
/// depend on the standard library's distribution implementation.
inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations on double-precision points.
/// Stops when the relative inertia change drops below `tolerance` or after
/// `max_iterations`. `image_ids` of the result is left empty.
inline ClusterModel kmeans(std::span<const std::vector<double>> points, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options = {}) {
    const std::size_t n = points.size();
    if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
    if (k > n) {
        throw Error(Errc::k_too_large, "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    }
    const std::size_t dim = points[0].size();
    for (std::size_t i = 0; i < n; ++i) {
        if (points[i].size() != dim) throw Error(Errc::dim_mismatch, "point " + std::to_string(i) + ": length differs");
        if (!std::all_of(points[i].begin(), points[i].end(), [](double v) { return std::isfinite(v); })) {
            throw Error(Errc::non_finite_value, "point " + std::to_string(i) + ": non-finite value");
        }
    }

    ClusterModel model;
    model.k = k;
    model.dim = dim;
    model.seed = seed;

    auto as_centroid = [&](std::size_t i) { return points[i]; };

    // k-means++ seeding.
    std::mt19937_64 rng(seed);
    std::vector<bool> chosen(n, false);
    std::vector<std::vector<double>> centroids;
    std::size_t first = std::min(n - 1, static_cast<std::size_t>(detail::uniform01(rng) * double(n)));
    centroids.push_back(as_centroid(first));
    chosen[first] = true;
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = detail::squared_distance(centroids[0], points[i]);
    while (centroids.size() < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = detail::uniform01(rng) * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                cum += d2[i];
                pick = i;
                if (cum > target) break;
            }
        } else {
            // Every remaining point coincides with a centre: take the next unused one.
            for (std::size_t i = 0; i < n && pick == n; ++i) {
                if (!chosen[i]) pick = i;
            }
        }
        chosen[pick] = true;
        centroids.push_back(as_centroid(pick));
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], detail::squared_distance(centroids.back(), points[i]));
        }
    }

    std::vector<std::uint32_t> labels(n, 0);
    std::vector<double> cost(n, 0.0);
    auto assign = [&](const std::vector<std::vector<double>>& cs) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t best_c = 0;
            for (std::size_t c = 0; c < cs.size(); ++c) {
                const double d = detail::squared_distance(cs[c], points[i]);
                if (d < best) {
                    best = d;
                    best_c = static_cast<std::uint32_t>(c);
                }
            }
            labels[i] = best_c;
            cost[i] = best;
            inertia += best;
        }
        return inertia;
    };

    double inertia = assign(centroids);
    model.inertia_history.push_back(inertia);
    for (std::size_t iter = 1; iter < options.max_iterations && inertia > 0.0; ++iter) {
        // Update step: means of members; empty clusters take the point that is
        // currently farthest from its centre.
        std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++sizes[labels[i]];
            for (std::size_t j = 0; j < dim; ++j) next[labels[i]][j] += points[i][j];
        }
        std::vector<double> spare = cost;
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                for (double& v : next[c]) v /= double(sizes[c]);
                continue;
            }
            const auto far = static_cast<std::size_t>(std::max_element(spare.begin(), spare.end()) - spare.begin());
            next[c] = as_centroid(far);
            spare[far] = -1.0;
        }

        const auto prev_labels = labels;
        const auto prev_cost = cost;
        const double updated = assign(next);
        if (updated > inertia) {
            // Only reachable through rounding once converged; keep the previous state.
            labels = prev_labels;
            cost = prev_cost;
            break;
        }
        const double change = (inertia - updated) / inertia;
        centroids = std::move(next);
        inertia = updated;
        model.inertia_history.push_back(inertia);
        if (change < options.tolerance) break;
    }

    model.centroids = std::move(centroids);
    model.labels = std::move(labels);
    model.inertia = inertia;
    return model;
}

/// Clusters crop descriptors; labels and image_ids follow input order.
inline ClusterModel kmeans(std::span<const CropDescriptor> descriptors, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options = {}) {
    std::vector<std::vector<double>> points;
    points.reserve(descriptors.size());
    for (const auto& d : descriptors) {
        if (d.vector.size() != descriptors[0].vector.size()) {
            throw Error(Errc::dim_mismatch, d.image_id + ": descriptor length differs");
        }
        if (!detail::all_finite(d.vector)) throw Error(Errc::non_finite_value, d.image_id + ": non-finite descriptor");
        points.emplace_back(d.vector.begin(), d.vector.end());
    }
    auto model = kmeans(std::span<const std::vector<double>>(points), k, seed, options);
    for (const auto& d : descriptors) model.image_ids.push_back(d.image_id);
    return model;
}

inline nlohmann::json to_json(const ClusterModel& m) {
    nlohmann::json assignments = nlohmann::json::object();
    for (const auto& [id, c] : m.assignments()) assignments[id] = c;
    return {{"k", m.k},
            {"dim", m.dim},
            {"seed", m.seed},
            {"inertia", m.inertia},
            {"iterations", m.inertia_history.size()},
            {"centroids", m.centroids},
            {"assignments", assignments}};
}

// ---------------------------------------------------------------------------
// Hungarian matching

/// Dense row-major cost matrix.
struct CostMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    CostMatrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        for (const auto& row : init) {
            if (row.size() != cols) throw Error(Errc::invalid_argument, "ragged cost matrix");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Assignment {
    std::vector<int> row_to_col;  // -1 for rows left unassigned (rows > cols)
    double cost = 0.0;

    friend bool operator==(const Assignment&, const Assignment&) = default;
};

namespace detail {

struct HungarianSolution {
    std::vector<double> u;      // row potentials, 1-based
    std::vector<double> v;      // column potentials, 1-based
    std::vector<std::size_t> p; // column -> row, 1-based, 0 = none
};

/// O(n^3) shortest-augmenting-path Hungarian algorithm with potentials on a
/// square matrix. Reduced costs a[i][j] - u[i] - v[j] stay >= 0 and vanish
/// on the matching.
inline HungarianSolution solve_square(const CostMatrix& a) {
    const std::size_t n = a.rows;
    const double inf = std::numeric_limits<double>::infinity();
    HungarianSolution s{std::vector<double>(n + 1, 0.0), std::vector<double>(n + 1, 0.0),
                        std::vector<std::size_t>(n + 1, 0)};
    std::vector<std::size_t> way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        s.p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = s.p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - s.u[i0] - s.v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    s.u[s.p[j]] += delta;
                    s.v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (s.p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            s.p[j0] = s.p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    return s;
}

}  // namespace detail

/// Minimum-cost injective row -> column map of size min(rows, cols).
///
/// Among optimal assignments the lexicographically smallest row_to_col vector
/// is returned (unassigned rows compare after every column). A perfect
/// matching is optimal iff it only uses edges that are tight under an optimal
/// dual, so the tie rule reduces to a greedy search in that tight subgraph.
inline Assignment hungarian(const CostMatrix& cost) {
    for (double c : cost.data) {
        if (!std::isfinite(c)) throw Error(Errc::non_finite_cost, "cost matrix has NaN or Inf");
    }
    Assignment out;
    out.row_to_col.assign(cost.rows, -1);
    if (cost.rows == 0 || cost.cols == 0) return out;

    // Pad to square with zero-cost dummy rows/columns placed after the real ones.
    const std::size_t n = std::max(cost.rows, cost.cols);
    CostMatrix sq(n, n, 0.0);
    double scale = 1.0;
    for (std::size_t i = 0; i < cost.rows; ++i) {
        for (std::size_t j = 0; j < cost.cols; ++j) {
            sq(i, j) = cost(i, j);
            scale = std::max(scale, std::abs(cost(i, j)));
        }
    }
    const auto sol = detail::solve_square(sq);
    const double eps = 1e-9 * scale * double(n);

    std::vector<std::vector<std::size_t>> tight(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (sq(i, j) - sol.u[i + 1] - sol.v[j + 1] <= eps) tight[i].push_back(j);
        }
    }

    // Current perfect matching inside the tight graph.
    std::vector<std::size_t> row_of(n), col_of(n);
    for (std::size_t j = 1; j <= n; ++j) {
        row_of[j - 1] = sol.p[j] - 1;
        col_of[sol.p[j] - 1] = j - 1;
    }

    // Fix rows in order, each to the smallest tight column that still admits
    // a perfect matching of the later rows: moving row i from column c0 to c
    // needs an alternating path from c's current owner to c0 through rows > i.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c : tight[i]) {
            if (c == col_of[i]) break;
            const std::size_t owner = row_of[c];
            if (owner < i) continue;
            const std::size_t target = col_of[i];
            // BFS over rows > i; parent links let us rotate the path.
            std::vector<std::ptrdiff_t> prev_row(n, -1);
            std::vector<bool> seen_row(n, false);
            std::deque<std::size_t> queue{owner};
            seen_row[owner] = true;
            std::ptrdiff_t end_row = -1;
            while (!queue.empty() && end_row < 0) {
                const std::size_t r = queue.front();
                queue.pop_front();
                for (std::size_t cc : tight[r]) {
                    if (cc == c || cc == col_of[r]) continue;
                    if (cc == target) {
                        end_row = static_cast<std::ptrdiff_t>(r);
                        break;
                    }
                    const std::size_t nr = row_of[cc];
                    if (nr <= i || seen_row[nr]) continue;
                    seen_row[nr] = true;
                    prev_row[nr] = static_cast<std::ptrdiff_t>(r);
                    queue.push_back(nr);
                }
            }
            if (end_row < 0) continue;
            // Rotate: walk back from end_row; each row takes the column of the row after it.
            std::size_t r = static_cast<std::size_t>(end_row);
            std::size_t take = target;
            while (true) {
                const std::size_t old = col_of[r];
                col_of[r] = take;
                row_of[take] = r;
                if (r == owner) break;
                take = old;
                r = static_cast<std::size_t>(prev_row[r]);
            }
            col_of[i] = c;
            row_of[c] = i;
            break;
        }
    }

    for (std::size_t i = 0; i < cost.rows; ++i) {
        if (col_of[i] < cost.cols) {
            out.row_to_col[i] = static_cast<int>(col_of[i]);
            out.cost += cost(i, col_of[i]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cluster -> class matching

struct ClusterClassMap {
    std::map<int, std::string> pairs;
    std::vector<int> unmatched;
    std::vector<std::string> classes;             // column order of `hits`
    std::vector<std::vector<std::size_t>> hits;   // [cluster][class]
};

/// hits[c][class] = number of cluster-c boxes with IoU >= threshold against a
/// GT box of that class in the same image; Hungarian on -hits.
inline ClusterClassMap match_clusters(std::span<const Detection> labeled, const AnnotationSet& gt,
                                      std::size_t k, double iou_threshold = 0.5) {
    ClusterClassMap out;
    out.classes = class_names(gt);
    if (out.classes.empty()) throw Error(Errc::empty_ground_truth, "no ground-truth classes to match against");
    std::map<std::string, std::size_t> class_index;
    for (std::size_t i = 0; i < out.classes.size(); ++i) class_index[out.classes[i]] = i;

    out.hits.assign(k, std::vector<std::size_t>(out.classes.size(), 0));
    for (const auto& d : labeled) {
        if (!d.box.label) continue;
        const int label = *d.box.label;
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw Error(Errc::invalid_argument, d.image_id + ": label " + std::to_string(label) + " outside [0, k)");
        }
        const auto img = gt.find(d.image_id);
        if (img == gt.end()) continue;
        std::vector<bool> counted(out.classes.size(), false);
        for (const auto& g : img->second.objects) {
            const auto ci = class_index.at(g.category);
            if (!counted[ci] && iou(d.box, g.box) >= iou_threshold) {
                counted[ci] = true;
                ++out.hits[static_cast<std::size_t>(label)][ci];
            }
        }
    }

    CostMatrix cost(k, out.classes.size());
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < out.classes.size(); ++j) cost(c, j) = -double(out.hits[c][j]);
    }
    const auto a = hungarian(cost);
    for (std::size_t c = 0; c < k; ++c) {
        if (a.row_to_col[c] >= 0) {
            out.pairs[static_cast<int>(c)] = out.classes[static_cast<std::size_t>(a.row_to_col[c])];
        } else {
            out.unmatched.push_back(static_cast<int>(c));
        }
    }
    return out;
}

/// Names pseudo-labels; detections of unmatched clusters are dropped.
inline std::vector<Detection> apply_class_map(std::span<const Detection> labeled, const ClusterClassMap& map) {
    std::vector<Detection> out;
    for (const auto& d : labeled) {
        if (!d.box.label) continue;
        const auto it = map.pairs.find(*d.box.label);
        if (it == map.pairs.end()) continue;
        Detection named = d;
        named.category = it->second;
        out.push_back(std::move(named));
    }
    return out;
}

inline nlohmann::json to_json(const ClusterClassMap& m) {
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& [c, name] : m.pairs) pairs[std::to_string(c)] = name;
    return {{"pairs", pairs}, {"unmatched", m.unmatched}, {"classes", m.classes}, {"hits", m.hits}};
}

inline ClusterClassMap cluster_class_map_from_json(const nlohmann::json& j) {
    ClusterClassMap m;
    try {
        for (const auto& [c, name] : j.at("pairs").items()) m.pairs[std::stoi(c)] = name.get<std::string>();
        m.unmatched = j.value("unmatched", std::vector<int>{});
        m.classes = j.value("classes", std::vector<std::string>{});
        m.hits = j.value("hits", std::vector<std::vector<std::size_t>>{});
    } catch (const std::exception& e) {
        throw Error(Errc::schema_violation, std::string("cluster map: ") + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Image neighbour retrieval

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// For each image, the tau other images whose descriptors have the highest
/// cosine similarity. Zero-norm descriptors rank after every other image;
/// ties go to the smaller image id.
inline NeighborLists retrieve_neighbors(std::span<const CropDescriptor> descriptors, std::size_t tau = 10) {
    const std::size_t n = descriptors.size();
    if (n < tau + 1) {
        throw Error(Errc::too_few_images, "need at least " + std::to_string(tau + 1) + " images, have " +
                                              std::to_string(n));
    }
    std::set<std::string> ids;
    std::vector<bool> zero(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = descriptors[i];
        if (d.vector.size() != descriptors[0].vector.size()) throw Error(Errc::dim_mismatch, d.image_id);
        if (!ids.insert(d.image_id).second) throw Error(Errc::invalid_argument, "duplicate image id " + d.image_id);
        zero[i] = std::all_of(d.vector.begin(), d.vector.end(), [](float v) { return v == 0.0f; });
    }

    NeighborLists out;
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < n; ++i) {
        ranked.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double s = (zero[i] || zero[j])
                                 ? -std::numeric_limits<double>::infinity()
                                 : cosine_similarity(descriptors[i].vector, descriptors[j].vector);
            ranked.emplace_back(s, j);
        }
        std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(tau), ranked.end(),
                          [&](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return descriptors[a.second].image_id < descriptors[b.second].image_id;
                          });
        auto& list = out[descriptors[i].image_id];
        for (std::size_t t = 0; t < tau; ++t) list.push_back(descriptors[ranked[t].second].image_id);
    }
    return out;
}

}  // namespace lostkit

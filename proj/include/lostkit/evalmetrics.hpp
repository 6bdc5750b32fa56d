// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lostkit/box.hpp"
#include "lostkit/datasets.hpp"
#include "lostkit/error.hpp"

namespace lostkit {

inline constexpr double kCorLocThreshold = 0.5;

/// A named set of results; values are percentages.
struct EvalReport {
    std::string title;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<std::pair<std::string, double>> per_class;
    std::vector<std::pair<std::string, std::size_t>> counts;

    std::optional<double> get(const std::string& name) const {
        for (const auto& [k, v] : metrics) {
            if (k == name) return v;
        }
        return std::nullopt;
    }
};

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [k, v] : r.metrics) metrics[k] = v;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [k, v] : r.per_class) per_class[k] = v;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [k, v] : r.counts) counts[k] = v;
    nlohmann::json j = {{"title", r.title}, {"metrics", metrics}, {"counts", counts}};
    if (!r.per_class.empty()) j["per_class"] = per_class;
    return j;
}

/// Aligned plain-text table: one header row of metric (or class) names and
/// one row of values with one decimal, like a results table in a report.
inline std::string to_table(const EvalReport& r) {
    std::vector<std::pair<std::string, std::string>> cols;
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", v);
        return std::string(buf);
    };
    for (const auto& [k, v] : r.per_class) cols.emplace_back(k, fmt(v));
    for (const auto& [k, v] : r.metrics) cols.emplace_back(k, fmt(v));

    std::string head = "Method";
    std::string row = r.title;
    const std::size_t first = std::max(head.size(), row.size());
    head.resize(first, ' ');
    row.resize(first, ' ');
    for (const auto& [name, value] : cols) {
        const std::size_t w = std::max(name.size(), value.size());
        head += " | " + std::string(w - name.size(), ' ') + name;
        row += " | " + std::string(w - value.size(), ' ') + value;
    }
    std::string rule(head.size(), '-');
    std::string out = head + "\n" + rule + "\n" + row + "\n";
    for (const auto& [k, v] : r.counts) out += k + ": " + std::to_string(v) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// CorLoc

struct CorLocResult {
    double percent = 0.0;
    std::size_t correct = 0;
    std::size_t evaluated = 0;
    std::size_t skipped_no_gt = 0;      // images without any GT box, excluded
    std::size_t missing_prediction = 0;  // evaluated images with no prediction (count as wrong)
};

/// Class-agnostic: an image is correct when its single box reaches IoU >= 0.5
/// with any ground-truth box of that image.
inline CorLocResult corloc(std::span<const Detection> preds, const AnnotationSet& gt) {
    std::map<std::string, const Detection*> by_image;
    for (const auto& d : preds) {
        if (!by_image.emplace(d.image_id, &d).second) {
            throw Error(Errc::invalid_argument, d.image_id + ": more than one prediction for CorLoc");
        }
    }
    CorLocResult r;
    for (const auto& [id, ann] : gt) {
        if (ann.objects.empty()) {
            ++r.skipped_no_gt;
            continue;
        }
        ++r.evaluated;
        const auto it = by_image.find(id);
        if (it == by_image.end()) {
            ++r.missing_prediction;
            continue;
        }
        const bool hit = std::any_of(ann.objects.begin(), ann.objects.end(), [&](const GtObject& g) {
            return iou(it->second->box, g.box) >= kCorLocThreshold;
        });
        if (hit) ++r.correct;
    }
    r.percent = r.evaluated == 0 ? 0.0 : 100.0 * double(r.correct) / double(r.evaluated);
    return r;
}

// ---------------------------------------------------------------------------
// Average precision

namespace detail {

/// Descending score, then image id, then input position.
inline std::vector<std::size_t> ranking(std::span<const Detection* const> preds) {
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a]->box.score != preds[b]->box.score) return preds[a]->box.score > preds[b]->box.score;
        return preds[a]->image_id < preds[b]->image_id;
    });
    return order;
}

/// All-point interpolated AP from a ranked TP/FP sequence.
inline double interpolated_ap(const std::vector<bool>& true_positive, std::size_t gt_count) {
    if (gt_count == 0 || true_positive.empty()) return 0.0;
    std::vector<double> recall;
    std::vector<double> precision;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < true_positive.size(); ++i) {
        if (true_positive[i]) ++tp;
        recall.push_back(double(tp) / double(gt_count));
        precision.push_back(double(tp) / double(i + 1));
    }
    // Precision envelope, right to left.
    for (std::size_t i = precision.size() - 1; i > 0; --i) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

inline double average_precision_impl(std::span<const Detection* const> preds, const AnnotationSet& gt,
                                     double iou_threshold, const std::optional<std::string>& cls) {
    auto counts = [&](const GtObject& g) { return !cls || g.category == *cls; };
    std::size_t gt_count = 0;
    std::map<std::string, std::vector<bool>> taken;
    for (const auto& [id, ann] : gt) {
        taken[id].assign(ann.objects.size(), false);
        gt_count += static_cast<std::size_t>(std::count_if(ann.objects.begin(), ann.objects.end(), counts));
    }

    const auto order = ranking(preds);
    std::vector<bool> tp;
    tp.reserve(order.size());
    for (std::size_t idx : order) {
        const Detection& d = *preds[idx];
        const auto img = gt.find(d.image_id);
        if (img == gt.end()) {
            tp.push_back(false);
            continue;
        }
        auto& used = taken[d.image_id];
        // Greedy: best IoU among still-unmatched GT boxes of the class.
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < img->second.objects.size(); ++j) {
            const auto& g = img->second.objects[j];
            if (used[j] || !counts(g)) continue;
            const double o = iou(d.box, g.box);
            if (o > best) {
                best = o;
                best_j = j;
            }
        }
        const bool hit = best >= iou_threshold;
        if (hit) used[best_j] = true;
        tp.push_back(hit);
    }
    return interpolated_ap(tp, gt_count);
}

}  // namespace detail

/// AP in [0, 1]. With `cls`, only predictions whose mapped category equals
/// it and only GT boxes of that class take part; otherwise class-agnostic.
inline double average_precision(std::span<const Detection> preds, const AnnotationSet& gt,
                                double iou_threshold = 0.5, const std::optional<std::string>& cls = {}) {
    std::vector<const Detection*> ptrs;
    for (const auto& d : preds) {
        if (!std::isfinite(d.box.score)) throw Error(Errc::non_finite_value, d.image_id + ": non-finite score");
        if (cls && d.category != cls) continue;
        ptrs.push_back(&d);
    }
    return detail::average_precision_impl(ptrs, gt, iou_threshold, cls);
}

// ---------------------------------------------------------------------------
// Object-discovery AP

/// IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(double(50 + 5 * i) / 100.0);
    return t;
}

struct OdApResult {
    std::size_t max_gt = 0;  // M
    std::vector<double> thresholds;
    std::vector<std::vector<double>> ap_per_n;  // [threshold][n-1]
    std::vector<double> od_ap;                  // per threshold, in [0, 1]

    double mean() const {
        if (od_ap.empty()) return 0.0;
        return std::accumulate(od_ap.begin(), od_ap.end(), 0.0) / double(od_ap.size());
    }
};

/// For n = 1..M (M = the largest GT count of any image), keep each image's n
/// best-scored boxes and compute class-agnostic AP; odAP is the mean over n.
inline OdApResult od_ap(std::span<const Detection> preds, const AnnotationSet& gt,
                        std::span<const double> thresholds) {
    OdApResult r;
    r.thresholds.assign(thresholds.begin(), thresholds.end());
    for (const auto& [id, ann] : gt) r.max_gt = std::max(r.max_gt, ann.objects.size());

    std::map<std::string, std::vector<const Detection*>> per_image;
    for (const auto& d : preds) {
        if (!std::isfinite(d.box.score)) throw Error(Errc::non_finite_value, d.image_id + ": non-finite score");
        per_image[d.image_id].push_back(&d);
    }
    for (auto& [id, list] : per_image) {
        std::stable_sort(list.begin(), list.end(),
                         [](const Detection* a, const Detection* b) { return a->box.score > b->box.score; });
    }

    for (double thr : thresholds) {
        std::vector<double> per_n;
        for (std::size_t n = 1; n <= r.max_gt; ++n) {
            std::vector<const Detection*> kept;
            for (const auto& [id, list] : per_image) {
                for (std::size_t i = 0; i < std::min(n, list.size()); ++i) kept.push_back(list[i]);
            }
            per_n.push_back(detail::average_precision_impl(kept, gt, thr, std::nullopt));
        }
        const double mean = per_n.empty() ? 0.0
                                          : std::accumulate(per_n.begin(), per_n.end(), 0.0) / double(per_n.size());
        r.ap_per_n.push_back(std::move(per_n));
        r.od_ap.push_back(mean);
    }
    return r;
}

inline EvalReport od_ap_report(std::span<const Detection> preds, const AnnotationSet& gt,
                               const std::string& title = "predictions") {
    const double at50[] = {0.5};
    const auto r50 = od_ap(preds, gt, at50);
    const auto thresholds = coco_thresholds();
    const auto r5095 = od_ap(preds, gt, thresholds);
    EvalReport report;
    report.title = title;
    report.metrics = {{"odAP50", 100.0 * r50.mean()}, {"odAP@[50-95]", 100.0 * r5095.mean()}};
    report.counts = {{"images", gt.size()}, {"boxes", preds.size()}, {"max_gt_per_image", r50.max_gt}};
    return report;
}

// ---------------------------------------------------------------------------
// CorRet

using NeighborLists = std::map<std::string, std::vector<std::string>>;
using ImageClasses = std::map<std::string, std::set<std::string>>;

/// Mean over images of the fraction of retrieved neighbours sharing at least
/// one ground-truth class with the query image, in percent.
inline double corret(const NeighborLists& neighbors, const ImageClasses& gt_classes, std::size_t tau) {
    if (neighbors.empty()) return 0.0;
    auto classes_of = [&](const std::string& id) -> const std::set<std::string>& {
        const auto it = gt_classes.find(id);
        if (it == gt_classes.end()) throw Error(Errc::missing_class_info, "no classes for image " + id);
        return it->second;
    };
    double total = 0.0;
    for (const auto& [id, list] : neighbors) {
        if (list.size() != tau) {
            throw Error(Errc::invalid_argument, id + ": expected " + std::to_string(tau) + " neighbours, got " +
                                                    std::to_string(list.size()));
        }
        const auto& mine = classes_of(id);
        std::size_t good = 0;
        for (const auto& other : list) {
            const auto& theirs = classes_of(other);
            const bool shared = std::any_of(mine.begin(), mine.end(),
                                            [&](const std::string& c) { return theirs.count(c) > 0; });
            if (shared) ++good;
        }
        total += tau == 0 ? 0.0 : double(good) / double(tau);
    }
    return 100.0 * total / double(neighbors.size());
}

}  // namespace lostkit

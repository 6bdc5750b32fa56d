// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind the `lostkit` executable. Each command
// reads explicit input paths and writes its artifacts to files; diagnostics
// go to the error stream only.

#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lostkit/box.hpp"
#include "lostkit/cluster.hpp"
#include "lostkit/datasets.hpp"
#include "lostkit/dinoseg.hpp"
#include "lostkit/error.hpp"
#include "lostkit/evalmetrics.hpp"
#include "lostkit/lost.hpp"
#include "lostkit/patchgraph.hpp"
#include "lostkit/tensorio.hpp"

namespace lostkit::cli {

namespace fs = std::filesystem;

struct RunConfig {
    std::string command;
    fs::path dataset;        // dataset manifest
    fs::path feature_root;   // overrides the image manifest directory for relative feature paths
    SimilarityMode mode = SimilarityMode::dot(FeatureKind::key);
    std::uint32_t k = kDefaultExpansionBudget;
    HeadSelection head = HeadSelection::fixed(kDefaultHead);
    std::size_t tau = 10;
    std::optional<std::size_t> clusters;
    std::uint64_t seed = 0;
    DatasetFilter filter = DatasetFilter::all;
    std::string metric = "corloc";

    fs::path predictions;
    fs::path gt;             // VOC annotation directory or COCO json
    fs::path ids;            // optional image-id list restricting the ground truth
    fs::path descriptors;
    fs::path cluster_map;
    fs::path image_root;

    fs::path out;
    fs::path table;
    fs::path model_out;
    fs::path map_out;
    fs::path neighbors_out;

    bool skip_missing = false;
    unsigned threads = 1;
    bool verbose = false;
};

/// Diagnostic sink; tests swap it to capture or silence warnings.
inline std::ostream*& diagnostics() {
    static std::ostream* sink = &std::cerr;
    return sink;
}

inline void warn(const std::string& message) { *diagnostics() << "warning: " << message << '\n'; }

// ---------------------------------------------------------------------------

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results keep
/// input order; the first failure by index is rethrown.
template <typename T>
std::vector<T> parallel_map(std::size_t count, unsigned threads, const std::function<T(std::size_t)>& fn) {
    std::vector<std::optional<T>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                slots[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    std::vector<T> out;
    out.reserve(count);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

struct LoadedImage {
    ImageManifest manifest;
    fs::path manifest_dir;
};

inline LoadedImage load_image(const DatasetManifest& dataset, const DatasetEntry& entry) {
    const auto path = dataset.resolve(entry.manifest);
    if (!fs::exists(path)) throw Error(Errc::missing_feature_file, entry.image_id + ": no manifest at " + path.string());
    LoadedImage img{read_manifest(path), path.parent_path()};
    if (img.manifest.image_id != entry.image_id) {
        throw Error(Errc::schema_violation, path.string() + ": image_id '" + img.manifest.image_id +
                                                "' but dataset lists '" + entry.image_id + "'");
    }
    return img;
}

inline fs::path role_path(const RunConfig& cfg, const LoadedImage& img, const std::string& role) {
    const auto it = img.manifest.feature_files.find(role);
    if (it == img.manifest.feature_files.end()) {
        throw Error(Errc::missing_feature_file, img.manifest.image_id + ": manifest has no '" + role + "' file");
    }
    fs::path p = it->second;
    if (p.is_relative()) p = (cfg.feature_root.empty() ? img.manifest_dir : cfg.feature_root) / p;
    if (!fs::exists(p)) {
        throw Error(Errc::missing_feature_file, img.manifest.image_id + ": missing " + role + " file " + p.string());
    }
    return p;
}

inline FeatureMap load_features(const RunConfig& cfg, const LoadedImage& img, FeatureKind kind) {
    auto fm = read_feature_map(role_path(cfg, img, std::string(to_string(kind))));
    if (fm.kind != kind) {
        throw Error(Errc::schema_violation, img.manifest.image_id + ": " + std::string(to_string(kind)) +
                                                " file holds " + std::string(to_string(fm.kind)) + " features");
    }
    check_geometry(img.manifest, fm.grid_h, fm.grid_w);
    return fm;
}

inline FeatureSet load_feature_set(const RunConfig& cfg, const LoadedImage& img) {
    FeatureSet set;
    if (cfg.mode.variant == SimilarityMode::Variant::sym_qk) {
        set.query = load_features(cfg, img, FeatureKind::query);
        set.key = load_features(cfg, img, FeatureKind::key);
        return set;
    }
    switch (cfg.mode.kind) {
        case FeatureKind::query: set.query = load_features(cfg, img, FeatureKind::query); break;
        case FeatureKind::value: set.value = load_features(cfg, img, FeatureKind::value); break;
        default: set.key = load_features(cfg, img, FeatureKind::key); break;
    }
    return set;
}

/// Runs `per_image` over the dataset in image-id order, honouring --skip-missing.
inline std::vector<Detection> for_each_image(const RunConfig& cfg,
                                             const std::function<Detection(const LoadedImage&)>& per_image) {
    const auto dataset = read_dataset_manifest(cfg.dataset);
    using Slot = std::optional<Detection>;
    const auto results = parallel_map<Slot>(dataset.images.size(), cfg.threads, [&](std::size_t i) -> Slot {
        try {
            return per_image(load_image(dataset, dataset.images[i]));
        } catch (const Error& e) {
            if (cfg.skip_missing && e.code() == Errc::missing_feature_file) return std::nullopt;
            throw;
        }
    });
    std::vector<Detection> out;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i]) out.push_back(*results[i]);
        else warn("skipped " + dataset.images[i].image_id + " (missing features)");
    }
    return out;
}

inline AnnotationSet load_ground_truth(const RunConfig& cfg) {
    if (cfg.gt.empty()) throw Error(Errc::invalid_argument, "--gt is required");
    AnnotationSet gt = fs::is_directory(cfg.gt) ? parse_voc_directory(cfg.gt) : parse_coco(cfg.gt);
    if (!cfg.ids.empty()) {
        std::ifstream in(cfg.ids);
        if (!in) throw Error(Errc::io_failure, "cannot open " + cfg.ids.string());
        std::vector<std::string> ids;
        for (std::string line; std::getline(in, line);) {
            const auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const auto e = line.find_last_not_of(" \t\r");
            ids.push_back(fs::path(line.substr(b, e - b + 1)).stem().string());
        }
        gt = restrict_to(gt, ids);
    }
    return apply_filter(gt, cfg.filter);
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.empty()) return;
    lostkit::detail::spill(path, text);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline std::vector<Detection> cmd_detect(const RunConfig& cfg) {
    auto dets = detail::for_each_image(cfg, [&](const detail::LoadedImage& img) {
        const auto features = detail::load_feature_set(cfg, img);
        const auto affinity = PatchAffinity::from(features, cfg.mode);
        if (cfg.k > affinity.patch_count()) {
            warn(img.manifest.image_id + ": k = " + std::to_string(cfg.k) + " exceeds N = " +
                 std::to_string(affinity.patch_count()) + ", using N");
        }
        const auto loc = localize_detailed(affinity, img.manifest, cfg.k);
        if (cfg.verbose) {
            const auto& d = loc.degrees.degrees;
            const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
            *diagnostics() << img.manifest.image_id << ": seed " << loc.seeds.initial << " degree min " << *lo
                           << " max " << *hi << " N " << d.size() << " |S| " << loc.seeds.seeds.size() << '\n';
        }
        Detection det;
        det.image_id = img.manifest.image_id;
        det.box = loc.box;
        det.seed = loc.seeds.initial;
        det.method = "lost";
        return det;
    });
    if (!cfg.out.empty()) write_predictions(dets, cfg.out);
    return dets;
}

inline std::vector<Detection> cmd_baseline(const RunConfig& cfg) {
    auto dets = detail::for_each_image(cfg, [&](const detail::LoadedImage& img) {
        const auto att = read_attention_stack(detail::role_path(cfg, img, "attention"));
        Detection det;
        det.image_id = img.manifest.image_id;
        det.box = select_head_box(att, img.manifest, cfg.head);
        det.method = "dinoseg";
        return det;
    });
    if (!cfg.out.empty()) write_predictions(dets, cfg.out);
    return dets;
}

struct ClusterOutputs {
    std::vector<Detection> labeled;
    ClusterModel model;
    std::optional<ClusterClassMap> class_map;
};

inline ClusterOutputs cmd_cluster(const RunConfig& cfg) {
    const auto descriptors = read_crop_descriptors(cfg.descriptors);
    std::optional<AnnotationSet> gt;
    if (!cfg.gt.empty()) gt = detail::load_ground_truth(cfg);

    std::size_t k = 0;
    if (cfg.clusters) k = *cfg.clusters;
    else if (gt) k = class_names(*gt).size();
    else throw Error(Errc::invalid_argument, "--clusters is required when no ground truth is given");

    ClusterOutputs out;
    out.model = kmeans(descriptors, k, cfg.seed);
    const auto assignment = out.model.assignments();

    out.labeled = read_predictions(cfg.predictions);
    for (auto& d : out.labeled) {
        const auto it = assignment.find(d.image_id);
        if (it == assignment.end()) {
            warn(d.image_id + ": no crop descriptor, left unlabeled");
            d.box.label.reset();
        } else {
            d.box.label = static_cast<int>(it->second);
        }
    }
    if (!cfg.out.empty()) write_predictions(out.labeled, cfg.out);
    detail::write_text(cfg.model_out, to_json(out.model).dump(2) + "\n");

    if (gt) {
        out.class_map = match_clusters(out.labeled, *gt, k);
        detail::write_text(cfg.map_out, to_json(*out.class_map).dump(2) + "\n");
    }
    if (!cfg.neighbors_out.empty()) {
        const auto neighbors = retrieve_neighbors(descriptors, cfg.tau);
        detail::write_text(cfg.neighbors_out, nlohmann::json(neighbors).dump(2) + "\n");
    }
    return out;
}

inline EvalReport cmd_eval(const RunConfig& cfg) {
    const auto gt = detail::load_ground_truth(cfg);
    EvalReport report;
    report.title = cfg.predictions.empty() ? cfg.metric : cfg.predictions.stem().string();

    if (cfg.metric == "corret") {
        const auto descriptors = read_crop_descriptors(cfg.descriptors);
        std::vector<CropDescriptor> kept;
        for (const auto& d : descriptors) {
            if (gt.count(d.image_id)) kept.push_back(d);
        }
        const auto neighbors = retrieve_neighbors(kept, cfg.tau);
        report.metrics = {{"CorRet", corret(neighbors, image_classes(gt), cfg.tau)}};
        report.counts = {{"images", kept.size()}, {"tau", cfg.tau}};
    } else {
        auto preds = read_predictions(cfg.predictions);
        if (cfg.metric == "corloc") {
            const auto r = corloc(preds, gt);
            if (r.skipped_no_gt > 0) warn(std::to_string(r.skipped_no_gt) + " images without ground truth excluded");
            if (r.missing_prediction > 0) {
                warn(std::to_string(r.missing_prediction) + " images have no prediction (counted as wrong)");
            }
            report.metrics = {{"CorLoc", r.percent}};
            report.counts = {{"images", r.evaluated}, {"correct", r.correct}, {"excluded_no_gt", r.skipped_no_gt}};
        } else if (cfg.metric == "odap") {
            report = od_ap_report(preds, gt, report.title);
        } else if (cfg.metric == "ap") {
            if (cfg.cluster_map.empty()) {
                report.metrics = {{"AP50", 100.0 * average_precision(preds, gt, 0.5)}};
            } else {
                const auto map = cluster_class_map_from_json(nlohmann::json::parse(lostkit::detail::slurp(cfg.cluster_map)));
                const auto named = apply_class_map(preds, map);
                double sum = 0.0;
                const auto classes = class_names(gt);
                for (const auto& cls : classes) {
                    const double ap = 100.0 * average_precision(named, gt, 0.5, cls);
                    report.per_class.emplace_back(cls, ap);
                    sum += ap;
                }
                report.metrics = {{"mAP50", classes.empty() ? 0.0 : sum / double(classes.size())}};
            }
            report.counts = {{"images", gt.size()}, {"boxes", preds.size()}};
        } else {
            throw Error(Errc::invalid_argument, "unknown metric '" + cfg.metric + "'");
        }
    }
    detail::write_text(cfg.out, to_json(report).dump(2) + "\n");
    detail::write_text(cfg.table, to_table(report));
    for (const auto& [name, value] : report.metrics) *diagnostics() << name << ": " << value << '\n';
    return report;
}

}  // namespace lostkit::cli

// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lostkit/commands.hpp"
#ifdef LOSTKIT_WITH_OPENCV
#include "lostkit/render.hpp"
#endif

namespace lostkit::cli {

namespace detail {

struct RawFlags {
    std::string mode = "key";
    std::string head = "4";
    std::string filter = "all";
    std::size_t clusters = 0;
};

inline void add_dataset_options(CLI::App* cmd, RunConfig& cfg, RawFlags& raw) {
    cmd->add_option("--dataset", cfg.dataset, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--feature-root", cfg.feature_root, "Base directory for relative feature paths");
    cmd->add_option("--threads", cfg.threads, "Worker threads")->check(CLI::Range(1u, 1024u));
    cmd->add_flag("--skip-missing", cfg.skip_missing, "Skip images whose feature files are missing");
    (void)raw;
}

inline void add_lost_options(CLI::App* cmd, RunConfig& cfg, RawFlags& raw) {
    cmd->add_option("--mode", raw.mode, "Patch similarity: key, query, value or sym-qk")
        ->check(CLI::IsMember({"key", "query", "value", "sym-qk"}));
    cmd->add_option("--k", cfg.k, "Seed expansion budget")->check(CLI::Range(1u, 1u << 24));
}

}  // namespace detail

/// Parses argv and runs one command. Returns the process exit code.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Unsupervised single-object localization from transformer patch features"};
    app.require_subcommand(1);

    RunConfig cfg;
    detail::RawFlags raw;

    auto* detect = app.add_subcommand("detect", "Localize one object per image from patch features");
    detail::add_dataset_options(detect, cfg, raw);
    detail::add_lost_options(detect, cfg, raw);
    detect->add_option("--out", cfg.out, "Predictions (JSON Lines)")->required();
    detect->add_flag("--verbose", cfg.verbose, "Print per-image degree statistics");

    auto* baseline = app.add_subcommand("baseline", "Attention-map baseline, one box per image");
    detail::add_dataset_options(baseline, cfg, raw);
    baseline->add_option("--head", raw.head, "Head index, bcc or haiou");
    baseline->add_option("--out", cfg.out, "Predictions (JSON Lines)")->required();

    auto* cluster = app.add_subcommand("cluster", "K-means pseudo-labels for predicted boxes");
    cluster->add_option("--descriptors", cfg.descriptors, "Crop descriptor file")->required()->check(CLI::ExistingFile);
    cluster->add_option("--predictions", cfg.predictions, "Predictions to label")->required()->check(CLI::ExistingFile);
    cluster->add_option("--clusters", raw.clusters, "Number of clusters (default: class count of --gt)");
    cluster->add_option("--seed", cfg.seed, "RNG seed");
    cluster->add_option("--gt", cfg.gt, "Ground truth (VOC directory or COCO json) for cluster matching");
    cluster->add_option("--ids", cfg.ids, "Image id list restricting the ground truth");
    cluster->add_option("--filter", raw.filter)->check(CLI::IsMember({"all", "noh"}));
    cluster->add_option("--tau", cfg.tau, "Neighbours per image for --neighbors-out");
    cluster->add_option("--out", cfg.out, "Labeled predictions (JSON Lines)")->required();
    cluster->add_option("--model-out", cfg.model_out, "Cluster model (JSON)");
    cluster->add_option("--map-out", cfg.map_out, "Cluster to class map (JSON)");
    cluster->add_option("--neighbors-out", cfg.neighbors_out, "Retrieved image neighbours (JSON)");

    auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
    eval->add_option("--metric", cfg.metric, "corloc, odap, ap or corret")
        ->check(CLI::IsMember({"corloc", "odap", "ap", "corret"}));
    eval->add_option("--predictions", cfg.predictions, "Predictions (JSON Lines)")->check(CLI::ExistingFile);
    eval->add_option("--gt", cfg.gt, "Ground truth (VOC directory or COCO json)")->required()->check(CLI::ExistingPath);
    eval->add_option("--ids", cfg.ids, "Image id list restricting the ground truth")->check(CLI::ExistingFile);
    eval->add_option("--filter", raw.filter)->check(CLI::IsMember({"all", "noh"}));
    eval->add_option("--cluster-map", cfg.cluster_map, "Cluster to class map for class-aware AP");
    eval->add_option("--descriptors", cfg.descriptors, "Crop descriptors (corret)");
    eval->add_option("--tau", cfg.tau, "Neighbours per image (corret)");
    eval->add_option("--out", cfg.out, "Report (JSON)")->required();
    eval->add_option("--table", cfg.table, "Report as an aligned text table");

#ifdef LOSTKIT_WITH_OPENCV
    auto* render = app.add_subcommand("render", "Overlay seed and boxes, and an inverse-degree heatmap");
    detail::add_dataset_options(render, cfg, raw);
    detail::add_lost_options(render, cfg, raw);
    render->add_option("--images", cfg.image_root, "Directory of source images");
    render->add_option("--out", cfg.out, "Output directory")->required();
#endif

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, std::cout, *diagnostics());
    }

    try {
        cfg.mode = parse_similarity_mode(raw.mode);
        cfg.head = parse_head_selection(raw.head);
        cfg.filter = parse_dataset_filter(raw.filter);
        if (raw.clusters > 0) cfg.clusters = raw.clusters;

        if (detect->parsed()) {
            cfg.command = "detect";
            const auto dets = cmd_detect(cfg);
            *diagnostics() << "detect: " << dets.size() << " boxes -> " << cfg.out.string() << '\n';
        } else if (baseline->parsed()) {
            cfg.command = "baseline";
            const auto dets = cmd_baseline(cfg);
            *diagnostics() << "baseline: " << dets.size() << " boxes -> " << cfg.out.string() << '\n';
        } else if (cluster->parsed()) {
            cfg.command = "cluster";
            const auto result = cmd_cluster(cfg);
            *diagnostics() << "cluster: k = " << result.model.k << ", inertia " << result.model.inertia << '\n';
        } else if (eval->parsed()) {
            cfg.command = "eval";
            if (cfg.metric == "corret" && cfg.descriptors.empty()) {
                throw Error(Errc::invalid_argument, "corret needs --descriptors");
            }
            if (cfg.metric != "corret" && cfg.predictions.empty()) {
                throw Error(Errc::invalid_argument, cfg.metric + " needs --predictions");
            }
            cmd_eval(cfg);
        }
#ifdef LOSTKIT_WITH_OPENCV
        else if (render->parsed()) {
            cfg.command = "render";
            const auto files = cmd_render(cfg);
            *diagnostics() << "render: wrote " << files.size() << " files\n";
        }
#endif
    } catch (const Error& e) {
        *diagnostics() << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        *diagnostics() << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace lostkit::cli

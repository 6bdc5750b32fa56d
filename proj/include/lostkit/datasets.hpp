// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "lostkit/box.hpp"
#include "lostkit/error.hpp"
#include "lostkit/tensorio.hpp"

namespace lostkit {

struct GtObject {
    std::string category;
    PixelBox box;
    bool difficult = false;
    bool truncated = false;

    friend bool operator==(const GtObject&, const GtObject&) = default;
};

struct ImageAnnotations {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<GtObject> objects;

    friend bool operator==(const ImageAnnotations&, const ImageAnnotations&) = default;
};

/// image_id -> annotations, ordered by image_id.
using AnnotationSet = std::map<std::string, ImageAnnotations>;

enum class DatasetFilter { all, noh };

inline DatasetFilter parse_dataset_filter(std::string_view text) {
    if (text == "all") return DatasetFilter::all;
    if (text == "noh") return DatasetFilter::noh;
    throw Error(Errc::invalid_argument, "filter must be 'all' or 'noh'");
}

namespace detail {

/// Clamps a box to the image and rejects inverted or empty results.
inline PixelBox checked_box(PixelBox box, std::uint32_t w, std::uint32_t h, const std::string& where) {
    if (!std::isfinite(box.x_min) || !std::isfinite(box.y_min) || !std::isfinite(box.x_max) ||
        !std::isfinite(box.y_max)) {
        throw Error(Errc::schema_violation, where + ": non-finite box coordinate");
    }
    if (box.x_max < box.x_min || box.y_max < box.y_min) {
        throw Error(Errc::inverted_box, where + ": max edge before min edge");
    }
    box.x_min = std::clamp(box.x_min, 0.0, double(w));
    box.y_min = std::clamp(box.y_min, 0.0, double(h));
    box.x_max = std::clamp(box.x_max, 0.0, double(w));
    box.y_max = std::clamp(box.y_max, 0.0, double(h));
    if (box.empty()) throw Error(Errc::inverted_box, where + ": box is empty inside the image");
    return box;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pascal VOC

/// Parses one VOC annotation document. VOC pixel coordinates are 1-based and
/// inclusive; boxes become 0-based half-open by shifting only the min edges.
inline ImageAnnotations parse_voc_document(const std::string& xml, const std::string& image_id) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(xml);
        pt::read_xml(in, tree);
    } catch (const pt::ptree_error& e) {
        throw Error(Errc::malformed_xml, image_id + ": " + e.what());
    }
    const auto root = tree.get_child_optional("annotation");
    if (!root) throw Error(Errc::malformed_xml, image_id + ": no <annotation> root");

    ImageAnnotations ann;
    try {
        const auto size = root->get_child_optional("size");
        if (!size) throw Error(Errc::missing_size, image_id + ": no <size> element");
        ann.width = static_cast<std::uint32_t>(size->get<double>("width", 0));
        ann.height = static_cast<std::uint32_t>(size->get<double>("height", 0));
        if (ann.width == 0 || ann.height == 0) {
            throw Error(Errc::missing_size, image_id + ": zero or absent width/height");
        }

        for (const auto& [tag, node] : *root) {
            if (tag != "object") continue;
            GtObject obj;
            obj.category = node.get<std::string>("name");
            obj.difficult = node.get<int>("difficult", 0) != 0;
            obj.truncated = node.get<int>("truncated", 0) != 0;
            const auto& bb = node.get_child("bndbox");
            PixelBox box = make_box(bb.get<double>("xmin") - 1.0, bb.get<double>("ymin") - 1.0,
                         bb.get<double>("xmax"), bb.get<double>("ymax"));
            if (bb.get<double>("xmax") < bb.get<double>("xmin") ||
                bb.get<double>("ymax") < bb.get<double>("ymin")) {
                throw Error(Errc::inverted_box, image_id + ": object '" + obj.category +
                                                    "' has max coordinate below min");
            }
            obj.box = detail::checked_box(box, ann.width, ann.height, image_id);
            ann.objects.push_back(std::move(obj));
        }
    } catch (const pt::ptree_error& e) {
        throw Error(Errc::malformed_xml, image_id + ": " + e.what());
    }
    return ann;
}

/// Image ids are the annotation file stems, as in VOC's ImageSets lists.
inline AnnotationSet parse_voc(std::span<const std::filesystem::path> files) {
    AnnotationSet out;
    for (const auto& file : files) {
        out[file.stem().string()] = parse_voc_document(detail::slurp(file), file.stem().string());
    }
    return out;
}

/// All *.xml files of a directory, in sorted order.
inline AnnotationSet parse_voc_directory(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".xml") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return parse_voc(files);
}

// ---------------------------------------------------------------------------
// COCO

namespace detail {

inline std::string coco_image_id(const nlohmann::json& image) {
    if (image.contains("file_name")) {
        return std::filesystem::path(image.at("file_name").get<std::string>()).stem().string();
    }
    return std::to_string(image.at("id").get<long long>());
}

}  // namespace detail

/// Image ids are file_name stems (numeric ids when file_name is absent).
/// Crowd annotations are flagged difficult.
inline AnnotationSet parse_coco_document(const nlohmann::json& doc) {
    AnnotationSet out;
    try {
        std::map<long long, std::string> categories;
        for (const auto& c : doc.at("categories")) {
            categories[c.at("id").get<long long>()] = c.at("name").get<std::string>();
        }
        std::map<long long, std::string> ids;
        for (const auto& image : doc.at("images")) {
            const auto id = detail::coco_image_id(image);
            ids[image.at("id").get<long long>()] = id;
            auto& ann = out[id];
            ann.width = image.at("width").get<std::uint32_t>();
            ann.height = image.at("height").get<std::uint32_t>();
            if (ann.width == 0 || ann.height == 0) throw Error(Errc::missing_size, id + ": zero image size");
        }
        for (const auto& a : doc.at("annotations")) {
            const auto image = ids.find(a.at("image_id").get<long long>());
            if (image == ids.end()) {
                throw Error(Errc::schema_violation, "annotation refers to unknown image id " +
                                                        a.at("image_id").dump());
            }
            const auto cat = categories.find(a.at("category_id").get<long long>());
            if (cat == categories.end()) {
                throw Error(Errc::unknown_category, "category id " + a.at("category_id").dump());
            }
            const auto& bbox = a.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4) throw Error(Errc::schema_violation, "bbox must be [x,y,w,h]");
            const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
            const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
            auto& ann = out[image->second];
            GtObject obj;
            obj.category = cat->second;
            obj.difficult = a.value("iscrowd", 0) != 0;
            obj.truncated = a.value("truncated", false);
            obj.box = detail::checked_box(make_box(x, y, x + w, y + h), ann.width, ann.height, image->second);
            ann.objects.push_back(std::move(obj));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_violation, std::string("COCO document: ") + e.what());
    }
    return out;
}

inline AnnotationSet parse_coco(const std::filesystem::path& path) {
    try {
        return parse_coco_document(nlohmann::json::parse(detail::slurp(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::schema_violation, path.string() + ": " + e.what());
    }
}

/// COCO-schema export. Categories are numbered in name order; `truncated`
/// is carried as an extra annotation field so import(export(a)) == a.
inline nlohmann::json export_coco(const AnnotationSet& set) {
    std::set<std::string> names;
    for (const auto& [id, ann] : set) {
        for (const auto& obj : ann.objects) names.insert(obj.category);
    }
    std::map<std::string, int> cat_ids;
    nlohmann::json categories = nlohmann::json::array();
    for (const auto& name : names) {
        cat_ids[name] = static_cast<int>(cat_ids.size()) + 1;
        categories.push_back({{"id", cat_ids[name]}, {"name", name}});
    }
    nlohmann::json images = nlohmann::json::array();
    nlohmann::json annotations = nlohmann::json::array();
    long long image_num = 0;
    long long ann_num = 0;
    for (const auto& [id, ann] : set) {
        ++image_num;
        images.push_back({{"id", image_num}, {"file_name", id + ".jpg"}, {"width", ann.width}, {"height", ann.height}});
        for (const auto& obj : ann.objects) {
            nlohmann::json a = {{"id", ++ann_num},
                                {"image_id", image_num},
                                {"category_id", cat_ids[obj.category]},
                                {"bbox", {obj.box.x_min, obj.box.y_min, obj.box.width(), obj.box.height()}},
                                {"iscrowd", obj.difficult ? 1 : 0}};
            if (obj.truncated) a["truncated"] = true;
            annotations.push_back(std::move(a));
        }
    }
    return {{"images", images}, {"annotations", annotations}, {"categories", categories}};
}

/// Restricts a set to a provided id list (e.g. a released subset membership).
inline AnnotationSet restrict_to(const AnnotationSet& set, std::span<const std::string> ids) {
    AnnotationSet out;
    for (const auto& id : ids) {
        if (auto it = set.find(id); it != set.end()) out.insert(*it);
    }
    return out;
}

/// `noh` drops every hard or truncated box, then every image left without boxes.
inline AnnotationSet apply_filter(const AnnotationSet& set, DatasetFilter filter) {
    if (filter == DatasetFilter::all) return set;
    AnnotationSet out;
    for (const auto& [id, ann] : set) {
        ImageAnnotations kept{ann.width, ann.height, {}};
        for (const auto& obj : ann.objects) {
            if (!obj.difficult && !obj.truncated) kept.objects.push_back(obj);
        }
        if (!kept.objects.empty()) out.emplace(id, std::move(kept));
    }
    return out;
}

/// Sorted class names present in the set.
inline std::vector<std::string> class_names(const AnnotationSet& set) {
    std::set<std::string> names;
    for (const auto& [id, ann] : set) {
        for (const auto& obj : ann.objects) names.insert(obj.category);
    }
    return {names.begin(), names.end()};
}

inline std::map<std::string, std::set<std::string>> image_classes(const AnnotationSet& set) {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& [id, ann] : set) {
        auto& classes = out[id];
        for (const auto& obj : ann.objects) classes.insert(obj.category);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Predictions (JSON Lines)

inline nlohmann::json to_json(const Detection& d) {
    nlohmann::json j = {{"image_id", d.image_id}, {"x_min", d.box.x_min}, {"y_min", d.box.y_min},
                        {"x_max", d.box.x_max},   {"y_max", d.box.y_max}, {"score", d.box.score}};
    if (d.box.label) j["label"] = *d.box.label;
    if (d.category) j["category"] = *d.category;
    if (d.seed) j["seed"] = *d.seed;
    if (!d.method.empty()) j["method"] = d.method;
    return j;
}

inline Detection detection_from_json(const nlohmann::json& j) {
    Detection d;
    try {
        d.image_id = j.at("image_id").get<std::string>();
        d.box.x_min = j.at("x_min").get<double>();
        d.box.y_min = j.at("y_min").get<double>();
        d.box.x_max = j.at("x_max").get<double>();
        d.box.y_max = j.at("y_max").get<double>();
        d.box.score = j.value("score", 1.0);
        if (j.contains("label") && !j.at("label").is_null()) d.box.label = j.at("label").get<int>();
        if (j.contains("category")) d.category = j.at("category").get<std::string>();
        if (j.contains("seed")) d.seed = j.at("seed").get<std::uint32_t>();
        d.method = j.value("method", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_violation, std::string("prediction record: ") + e.what());
    }
    if (!std::isfinite(d.box.score)) throw Error(Errc::non_finite_value, d.image_id + ": non-finite score");
    return d;
}

inline std::string format_predictions(std::span<const Detection> detections) {
    std::string out;
    for (const auto& d : detections) {
        out += to_json(d).dump();
        out += '\n';
    }
    return out;
}

inline void write_predictions(std::span<const Detection> detections, const std::filesystem::path& path) {
    detail::spill(path, format_predictions(detections));
}

inline std::vector<Detection> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    std::vector<Detection> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(detection_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::schema_violation,
                        path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct DatasetEntry {
    std::string image_id;
    std::filesystem::path manifest;  // absolute, or relative to the dataset manifest
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::string split;

    friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct DatasetManifest {
    std::filesystem::path root;  // directory the manifest was read from
    std::vector<DatasetEntry> images;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : root / p;
    }
};

inline nlohmann::json to_json(const DatasetManifest& dm) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& e : dm.images) {
        images.push_back({{"image_id", e.image_id},
                          {"manifest", e.manifest.generic_string()},
                          {"width", e.width},
                          {"height", e.height},
                          {"split", e.split}});
    }
    return {{"images", images}};
}

inline DatasetManifest read_dataset_manifest(const std::filesystem::path& path) {
    DatasetManifest dm;
    dm.root = path.parent_path();
    try {
        const auto j = nlohmann::json::parse(detail::slurp(path));
        std::set<std::string> seen;
        for (const auto& e : j.at("images")) {
            DatasetEntry entry;
            entry.image_id = e.at("image_id").get<std::string>();
            entry.manifest = e.at("manifest").get<std::string>();
            entry.width = e.value("width", 0u);
            entry.height = e.value("height", 0u);
            entry.split = e.value("split", std::string{});
            if (!seen.insert(entry.image_id).second) {
                throw Error(Errc::schema_violation, "duplicate image id " + entry.image_id);
            }
            dm.images.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_violation, path.string() + ": " + e.what());
    }
    std::sort(dm.images.begin(), dm.images.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.image_id < b.image_id; });
    return dm;
}

inline void write_dataset_manifest(const DatasetManifest& dm, const std::filesystem::path& path) {
    detail::spill(path, to_json(dm).dump(2) + "\n");
}

}  // namespace lostkit

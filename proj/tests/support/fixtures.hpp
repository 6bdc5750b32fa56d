// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic feature maps and on-disk datasets for tests.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "lostkit/lostkit.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("lostkit-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = g(rng);
    return v;
}

inline double dotd(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Gram-Schmidt on `count` random vectors.
inline std::vector<std::vector<double>> orthonormal_basis(std::mt19937_64& rng, std::size_t dim, std::size_t count) {
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        auto v = gaussian_vector(rng, dim);
        for (const auto& b : basis) {
            const double c = dotd(v, b);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= c * b[i];
        }
        const double n = std::sqrt(dotd(v, v));
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    return basis;
}

struct Rect {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    std::uint32_t height = 1;
    std::uint32_t width = 1;

    bool contains(std::uint32_t r, std::uint32_t c) const {
        return r >= row && r < row + height && c >= col && c < col + width;
    }
    std::uint32_t area() const { return height * width; }
};

/// Geometry for a grid with no padding: image = grid * P.
inline lostkit::ImageManifest grid_manifest(std::uint32_t grid_h, std::uint32_t grid_w, std::uint32_t patch = 16,
                                            const std::string& id = "img") {
    lostkit::ImageManifest m;
    m.image_id = id;
    m.patch_size = patch;
    m.pad_w = m.image_w = grid_w * patch;
    m.pad_h = m.image_h = grid_h * patch;
    return m;
}

inline lostkit::PixelBox rect_pixels(const Rect& r, std::uint32_t patch = 16) {
    return lostkit::make_box(double(r.col * patch), double(r.row * patch), double((r.col + r.width) * patch),
                             double((r.row + r.height) * patch));
}

/// Object patches are all v, background patches all w = -v + u with u
/// orthogonal to v, so v.w < 0 while w.w > 0.
inline lostkit::FeatureMap planted_object(std::uint32_t grid_h, std::uint32_t grid_w, const Rect& object,
                                          std::mt19937_64& rng, std::uint32_t dim = 8,
                                          lostkit::FeatureKind kind = lostkit::FeatureKind::key) {
    const auto basis = orthonormal_basis(rng, dim, 2);
    std::vector<double> v(dim), w(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        v[i] = basis[0][i];
        w[i] = -basis[0][i] + 0.5 * basis[1][i];
    }
    lostkit::FeatureMap fm{grid_h, grid_w, dim, kind, {}};
    fm.data.reserve(std::size_t{grid_h} * grid_w * dim);
    for (std::uint32_t r = 0; r < grid_h; ++r) {
        for (std::uint32_t c = 0; c < grid_w; ++c) {
            const auto& src = object.contains(r, c) ? v : w;
            for (double x : src) fm.data.push_back(float(x));
        }
    }
    return fm;
}

/// Object whose appearance rotates across its columns: patch features are
/// v + 2 (cos t, sin t) in a plane orthogonal to v, with t going from 0 to
/// 180 degrees left to right, plus a small per-patch perturbation. Every
/// object patch keeps f.v = 1 > 0, but the two ends of the object are
/// negatively correlated with each other. Background is -v plus noise
/// orthogonal to the object subspace.
inline lostkit::FeatureMap rotating_object(std::uint32_t grid_h, std::uint32_t grid_w, const Rect& object,
                                           std::mt19937_64& rng, std::uint32_t dim = 16) {
    const auto basis = orthonormal_basis(rng, dim, dim);
    const auto& v = basis[0];
    const auto& u1 = basis[1];
    const auto& u2 = basis[2];
    std::normal_distribution<double> g(0.0, 1.0);
    const double pi = std::acos(-1.0);

    lostkit::FeatureMap fm{grid_h, grid_w, dim, lostkit::FeatureKind::key, {}};
    for (std::uint32_t r = 0; r < grid_h; ++r) {
        for (std::uint32_t c = 0; c < grid_w; ++c) {
            std::vector<double> f(dim, 0.0);
            if (object.contains(r, c)) {
                const double t = pi * double(c - object.col) / double(object.width - 1);
                for (std::size_t i = 0; i < dim; ++i) f[i] = v[i] + 2.0 * (std::cos(t) * u1[i] + std::sin(t) * u2[i]);
                for (std::size_t j = 3; j < dim; ++j) {
                    const double e = 0.01 * g(rng);
                    for (std::size_t i = 0; i < dim; ++i) f[i] += e * basis[j][i];
                }
            } else {
                for (std::size_t i = 0; i < dim; ++i) f[i] = -v[i];
                for (std::size_t j = 3; j < dim; ++j) {
                    const double e = 0.3 * g(rng) / std::sqrt(double(dim - 3));
                    for (std::size_t i = 0; i < dim; ++i) f[i] += e * basis[j][i];
                }
            }
            for (double x : f) fm.data.push_back(float(x));
        }
    }
    return fm;
}

inline lostkit::FeatureMap random_map(std::mt19937_64& rng, std::uint32_t grid_h, std::uint32_t grid_w,
                                      std::uint32_t dim) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    lostkit::FeatureMap fm{grid_h, grid_w, dim, lostkit::FeatureKind::key, {}};
    fm.data.resize(std::size_t{grid_h} * grid_w * dim);
    for (auto& x : fm.data) x = g(rng);
    return fm;
}

// ---------------------------------------------------------------------------
// On-disk dataset

struct FixtureImage {
    std::string id;
    Rect object;
    std::string category;
};

struct FixtureDataset {
    fs::path root;
    fs::path dataset_manifest;
    fs::path annotations;  // VOC directory
    fs::path descriptors;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<FixtureImage> images;
};

inline std::string voc_xml(const FixtureImage& img, std::uint32_t width, std::uint32_t height,
                           std::uint32_t patch) {
    const auto box = rect_pixels(img.object, patch);
    std::string xml = "<annotation>\n  <filename>" + img.id + ".jpg</filename>\n";
    xml += "  <size><width>" + std::to_string(width) + "</width><height>" + std::to_string(height) +
           "</height><depth>3</depth></size>\n";
    xml += "  <object>\n    <name>" + img.category + "</name>\n    <difficult>0</difficult>\n";
    xml += "    <bndbox><xmin>" + std::to_string(int(box.x_min) + 1) + "</xmin><ymin>" +
           std::to_string(int(box.y_min) + 1) + "</ymin><xmax>" + std::to_string(int(box.x_max)) +
           "</xmax><ymax>" + std::to_string(int(box.y_max)) + "</ymax></bndbox>\n";
    xml += "  </object>\n</annotation>\n";
    return xml;
}

/// Writes `count` planted-object images (key/query/value features and a
/// 6-head attention stack) with matching VOC annotations and one crop
/// descriptor per image. Images alternate between two categories.
inline FixtureDataset write_fixture_dataset(const fs::path& root, std::size_t count, std::uint64_t seed = 7) {
    FixtureDataset ds;
    ds.root = root;
    ds.grid_h = 10;
    ds.grid_w = 12;
    const std::uint32_t patch = 16;
    std::mt19937_64 rng(seed);
    fs::create_directories(root / "features");
    fs::create_directories(root / "Annotations");
    ds.annotations = root / "Annotations";

    lostkit::DatasetManifest manifest;
    std::vector<lostkit::CropDescriptor> descriptors;
    const char* categories[] = {"cat", "dog"};
    for (std::size_t i = 0; i < count; ++i) {
        FixtureImage img;
        img.id = "img_" + std::to_string(1000 + i);
        std::uniform_int_distribution<std::uint32_t> hd(1, 4), wd(1, 5);
        img.object.height = hd(rng);
        img.object.width = wd(rng);
        std::uniform_int_distribution<std::uint32_t> rd(0, ds.grid_h - img.object.height);
        std::uniform_int_distribution<std::uint32_t> cd(0, ds.grid_w - img.object.width);
        img.object.row = rd(rng);
        img.object.col = cd(rng);
        img.category = categories[i % 2];

        const auto dir = root / "features" / img.id;
        fs::create_directories(dir);
        lostkit::ImageManifest im = grid_manifest(ds.grid_h, ds.grid_w, patch, img.id);
        // Crop the last column of pixels so clipping is exercised.
        im.image_w -= 5;
        for (auto kind : {lostkit::FeatureKind::key, lostkit::FeatureKind::query, lostkit::FeatureKind::value}) {
            const std::string role(lostkit::to_string(kind));
            auto fm = planted_object(ds.grid_h, ds.grid_w, img.object, rng, 8, kind);
            lostkit::write_feature_map(fm, dir / (role + ".lfea"));
            im.feature_files[role] = role + ".lfea";
        }
        lostkit::AttentionStack att{6, ds.grid_h, ds.grid_w, {}};
        std::uniform_real_distribution<float> noise(0.0f, 0.1f);
        for (std::uint32_t h = 0; h < att.heads; ++h) {
            for (std::uint32_t r = 0; r < ds.grid_h; ++r) {
                for (std::uint32_t c = 0; c < ds.grid_w; ++c) {
                    att.data.push_back(img.object.contains(r, c) ? 1.0f + noise(rng) : noise(rng));
                }
            }
        }
        lostkit::write_attention_stack(att, dir / "attention.latt");
        im.feature_files["attention"] = "attention.latt";
        lostkit::write_manifest(im, dir / "manifest.json");

        lostkit::DatasetEntry entry;
        entry.image_id = img.id;
        entry.manifest = fs::path("features") / img.id / "manifest.json";
        entry.width = im.image_w;
        entry.height = im.image_h;
        entry.split = "trainval";
        manifest.images.push_back(entry);

        std::ofstream(ds.annotations / (img.id + ".xml")) << voc_xml(img, im.image_w, im.image_h, patch);

        lostkit::CropDescriptor d;
        d.image_id = img.id;
        std::normal_distribution<float> g(0.0f, 0.05f);
        d.vector = {i % 2 == 0 ? 1.0f : -1.0f, i % 2 == 0 ? 0.2f : 0.3f, 0.0f, 0.5f};
        for (auto& x : d.vector) x += g(rng);
        descriptors.push_back(d);

        ds.images.push_back(img);
    }
    ds.dataset_manifest = root / "dataset.json";
    lostkit::write_dataset_manifest(manifest, ds.dataset_manifest);
    ds.descriptors = root / "crops.lcls";
    lostkit::write_crop_descriptors(descriptors, ds.descriptors);
    return ds;
}

/// Expected pixel box of a fixture image, after clipping to the image width.
inline lostkit::PixelBox expected_box(const FixtureDataset& ds, const FixtureImage& img) {
    auto b = rect_pixels(img.object);
    b.x_max = std::min(b.x_max, double(ds.grid_w * 16 - 5));
    return b;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace fixtures

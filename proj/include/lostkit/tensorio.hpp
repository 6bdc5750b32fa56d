// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

// Binary exchange formats shared with the feature extractor.
//
// All headers are little-endian u32, all payloads little-endian IEEE-754
// binary32. Patches are linearized row-major: p = row * grid_w + col.
//
//   LFEA | version | grid_h | grid_w | dim | kind u8 | pad[3] | f32[grid_h*grid_w*dim]
//   LATT | version | heads | grid_h | grid_w | f32[heads*grid_h*grid_w]
//   LCLS | version | count | dim | { id_len u32 | id bytes | f32[dim] } * count
//
// Per-image manifests are JSON documents (see ImageManifest).

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lostkit/error.hpp"

namespace lostkit {

static_assert(std::numeric_limits<float>::is_iec559, "binary32 floats required");

inline constexpr std::uint32_t kFormatVersion = 1;

enum class FeatureKind : std::uint8_t { key = 0, query = 1, value = 2 };

constexpr std::string_view to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::key: return "key";
        case FeatureKind::query: return "query";
        case FeatureKind::value: return "value";
    }
    return "?";
}

struct FeatureMap {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint32_t dim = 0;
    FeatureKind kind = FeatureKind::key;
    std::vector<float> data;

    std::size_t patch_count() const { return std::size_t{grid_h} * grid_w; }

    std::span<const float> patch(std::size_t p) const {
        return std::span<const float>(data).subspan(p * dim, dim);
    }
    std::span<float> patch(std::size_t p) {
        return std::span<float>(data).subspan(p * dim, dim);
    }

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct AttentionStack {
    std::uint32_t heads = 0;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<float> data;

    std::size_t patch_count() const { return std::size_t{grid_h} * grid_w; }

    std::span<const float> head(std::size_t h) const {
        return std::span<const float>(data).subspan(h * patch_count(), patch_count());
    }

    friend bool operator==(const AttentionStack&, const AttentionStack&) = default;
};

struct CropDescriptor {
    std::string image_id;
    std::vector<float> vector;

    friend bool operator==(const CropDescriptor&, const CropDescriptor&) = default;
};

/// Geometry of one image as seen by the extractor. The image is padded
/// bottom/right to multiples of the patch size before patchification.
struct ImageManifest {
    std::string image_id;
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;
    std::uint32_t pad_w = 0;
    std::uint32_t pad_h = 0;
    std::uint32_t patch_size = 0;
    /// role ("key", "query", "value", "attention", ...) -> path relative to the manifest
    std::map<std::string, std::string> feature_files;

    std::uint32_t grid_w() const { return pad_w / patch_size; }
    std::uint32_t grid_h() const { return pad_h / patch_size; }

    friend bool operator==(const ImageManifest&, const ImageManifest&) = default;
};

namespace detail {

inline bool all_finite(std::span<const float> values) {
    for (float v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

class ByteWriter {
public:
    void raw(std::string_view bytes) { out_.append(bytes); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f32s(std::span<const float> vs) {
        out_.reserve(out_.size() + 4 * vs.size());
        for (float v : vs) f32(v);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string_view what)
        : bytes_(bytes), what_(what) {}

    void expect_magic(std::string_view magic) {
        need(magic.size());
        if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
            throw Error(Errc::bad_magic, std::string(what_) + ": expected magic \"" +
                                             std::string(magic) + "\"");
        }
        pos_ += magic.size();
    }
    void expect_version() {
        const auto v = u32();
        if (v != kFormatVersion) {
            throw Error(Errc::version_mismatch,
                        std::string(what_) + ": unsupported version " + std::to_string(v));
        }
    }
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void f32s(std::span<float> out) {
        need(4 * out.size());
        for (float& v : out) v = std::bit_cast<float>(u32());
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0) {
            throw Error(Errc::size_mismatch, std::string(what_) + ": " +
                                                 std::to_string(remaining()) +
                                                 " trailing bytes after payload");
        }
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) {
            throw Error(Errc::size_mismatch, std::string(what_) + ": truncated (need " +
                                                 std::to_string(n) + " bytes, have " +
                                                 std::to_string(remaining()) + ")");
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string_view what_;
};

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

/// Payload size guard: declared dims must describe exactly the bytes left.
inline void expect_payload(const ByteReader& r, std::uint64_t floats, std::string_view what) {
    if (floats > r.remaining() / 4 || floats * 4 != r.remaining()) {
        throw Error(Errc::size_mismatch, std::string(what) + ": header declares " +
                                             std::to_string(floats) + " floats but payload has " +
                                             std::to_string(r.remaining()) + " bytes");
    }
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spill(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io_failure, "short write to " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Validation

inline void validate(const FeatureMap& fm) {
    if (fm.grid_h < 1 || fm.grid_w < 1 || fm.dim < 1) {
        throw Error(Errc::invariant_violation, "feature map dimensions must be >= 1");
    }
    if (static_cast<std::uint8_t>(fm.kind) > 2) {
        throw Error(Errc::invariant_violation, "unknown feature kind");
    }
    if (fm.data.size() != fm.patch_count() * fm.dim) {
        throw Error(Errc::size_mismatch, "feature map data length disagrees with grid_h*grid_w*dim");
    }
    if (!detail::all_finite(fm.data)) {
        throw Error(Errc::non_finite_value, "feature map contains NaN or Inf");
    }
}

inline void validate(const AttentionStack& att) {
    if (att.heads < 1 || att.grid_h < 1 || att.grid_w < 1) {
        throw Error(Errc::invariant_violation, "attention stack dimensions must be >= 1");
    }
    if (att.data.size() != att.heads * att.patch_count()) {
        throw Error(Errc::size_mismatch, "attention data length disagrees with heads*grid_h*grid_w");
    }
    if (!detail::all_finite(att.data)) {
        throw Error(Errc::non_finite_value, "attention stack contains NaN or Inf");
    }
}

inline void validate(const ImageManifest& m) {
    if (m.patch_size == 0) throw Error(Errc::invariant_violation, "patch_size must be >= 1");
    if (m.image_w == 0 || m.image_h == 0) {
        throw Error(Errc::invariant_violation, m.image_id + ": empty image size");
    }
    if (m.pad_w < m.image_w || m.pad_h < m.image_h) {
        throw Error(Errc::invariant_violation, m.image_id + ": padded size smaller than image");
    }
    if (m.pad_w % m.patch_size != 0 || m.pad_h % m.patch_size != 0) {
        throw Error(Errc::invariant_violation,
                    m.image_id + ": padded size not a multiple of patch_size " +
                        std::to_string(m.patch_size));
    }
}

/// Feature and attention grids must agree with the manifest's patch arithmetic.
inline void check_geometry(const ImageManifest& m, std::uint32_t grid_h, std::uint32_t grid_w) {
    if (m.grid_h() != grid_h || m.grid_w() != grid_w) {
        throw Error(Errc::geometry_mismatch,
                    m.image_id + ": tensor grid " + std::to_string(grid_h) + "x" +
                        std::to_string(grid_w) + " vs manifest grid " + std::to_string(m.grid_h()) +
                        "x" + std::to_string(m.grid_w()));
    }
}

// ---------------------------------------------------------------------------
// Feature maps

inline std::string encode_feature_map(const FeatureMap& fm) {
    validate(fm);
    detail::ByteWriter w;
    w.raw("LFEA");
    w.u32(kFormatVersion);
    w.u32(fm.grid_h);
    w.u32(fm.grid_w);
    w.u32(fm.dim);
    w.u8(static_cast<std::uint8_t>(fm.kind));
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.f32s(fm.data);
    return w.take();
}

inline FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "feature file");
    r.expect_magic("LFEA");
    r.expect_version();
    FeatureMap fm;
    fm.grid_h = r.u32();
    fm.grid_w = r.u32();
    fm.dim = r.u32();
    const auto kind = r.u8();
    r.skip(3);
    if (kind > 2) throw Error(Errc::invariant_violation, "feature file: unknown kind " + std::to_string(kind));
    fm.kind = static_cast<FeatureKind>(kind);
    if (fm.grid_h < 1 || fm.grid_w < 1 || fm.dim < 1) {
        throw Error(Errc::invariant_violation, "feature file: zero dimension in header");
    }
    detail::expect_payload(r, std::uint64_t{fm.grid_h} * fm.grid_w * fm.dim, "feature file");
    fm.data.resize(fm.patch_count() * fm.dim);
    r.f32s(fm.data);
    r.expect_end();
    if (!detail::all_finite(fm.data)) {
        throw Error(Errc::non_finite_value, "feature file contains NaN or Inf");
    }
    return fm;
}

inline FeatureMap read_feature_map(const std::filesystem::path& path) {
    const auto bytes = detail::slurp(path);
    try {
        return decode_feature_map(detail::as_bytes(bytes));
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.detail());
    }
}

inline void write_feature_map(const FeatureMap& fm, const std::filesystem::path& path) {
    detail::spill(path, encode_feature_map(fm));
}

// ---------------------------------------------------------------------------
// Attention stacks

inline std::string encode_attention_stack(const AttentionStack& att) {
    validate(att);
    detail::ByteWriter w;
    w.raw("LATT");
    w.u32(kFormatVersion);
    w.u32(att.heads);
    w.u32(att.grid_h);
    w.u32(att.grid_w);
    w.f32s(att.data);
    return w.take();
}

inline AttentionStack decode_attention_stack(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "attention file");
    r.expect_magic("LATT");
    r.expect_version();
    AttentionStack att;
    att.heads = r.u32();
    att.grid_h = r.u32();
    att.grid_w = r.u32();
    if (att.heads < 1 || att.grid_h < 1 || att.grid_w < 1) {
        throw Error(Errc::invariant_violation, "attention file: zero dimension in header");
    }
    detail::expect_payload(r, std::uint64_t{att.heads} * att.grid_h * att.grid_w, "attention file");
    att.data.resize(att.heads * att.patch_count());
    r.f32s(att.data);
    r.expect_end();
    if (!detail::all_finite(att.data)) {
        throw Error(Errc::non_finite_value, "attention file contains NaN or Inf");
    }
    return att;
}

inline AttentionStack read_attention_stack(const std::filesystem::path& path) {
    const auto bytes = detail::slurp(path);
    try {
        return decode_attention_stack(detail::as_bytes(bytes));
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.detail());
    }
}

inline void write_attention_stack(const AttentionStack& att, const std::filesystem::path& path) {
    detail::spill(path, encode_attention_stack(att));
}

// ---------------------------------------------------------------------------
// Crop descriptors

inline std::string encode_crop_descriptors(std::span<const CropDescriptor> records) {
    const std::uint32_t dim = records.empty() ? 0 : static_cast<std::uint32_t>(records[0].vector.size());
    detail::ByteWriter w;
    w.raw("LCLS");
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    w.u32(dim);
    for (const auto& rec : records) {
        if (rec.vector.size() != dim) {
            throw Error(Errc::dim_mismatch, rec.image_id + ": descriptor length " +
                                                std::to_string(rec.vector.size()) + " != " +
                                                std::to_string(dim));
        }
        if (!detail::all_finite(rec.vector)) {
            throw Error(Errc::non_finite_value, rec.image_id + ": descriptor contains NaN or Inf");
        }
        w.u32(static_cast<std::uint32_t>(rec.image_id.size()));
        w.raw(rec.image_id);
        w.f32s(rec.vector);
    }
    return w.take();
}

inline std::vector<CropDescriptor> decode_crop_descriptors(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "descriptor file");
    r.expect_magic("LCLS");
    r.expect_version();
    const auto count = r.u32();
    const auto dim = r.u32();
    if (count > 0 && dim < 1) {
        throw Error(Errc::invariant_violation, "descriptor file: zero dimension in header");
    }
    std::vector<CropDescriptor> out;
    // Each record needs at least 4 + 4*dim bytes; reject absurd counts before reserving.
    if (std::uint64_t{count} * (4 + 4ull * dim) > r.remaining()) {
        throw Error(Errc::size_mismatch, "descriptor file: header declares more records than payload holds");
    }
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CropDescriptor rec;
        const auto id_len = r.u32();
        rec.image_id = r.str(id_len);
        rec.vector.resize(dim);
        r.f32s(rec.vector);
        if (!detail::all_finite(rec.vector)) {
            throw Error(Errc::non_finite_value, rec.image_id + ": descriptor contains NaN or Inf");
        }
        out.push_back(std::move(rec));
    }
    r.expect_end();
    return out;
}

inline std::vector<CropDescriptor> read_crop_descriptors(const std::filesystem::path& path) {
    const auto bytes = detail::slurp(path);
    try {
        return decode_crop_descriptors(detail::as_bytes(bytes));
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.detail());
    }
}

inline void write_crop_descriptors(std::span<const CropDescriptor> records,
                                   const std::filesystem::path& path) {
    detail::spill(path, encode_crop_descriptors(records));
}

// ---------------------------------------------------------------------------
// Manifests

inline nlohmann::json to_json(const ImageManifest& m) {
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [role, path] : m.feature_files) files[role] = path;
    return {{"image_id", m.image_id}, {"image_w", m.image_w}, {"image_h", m.image_h},
            {"pad_w", m.pad_w},       {"pad_h", m.pad_h},     {"patch_size", m.patch_size},
            {"feature_files", files}};
}

inline ImageManifest manifest_from_json(const nlohmann::json& j) {
    ImageManifest m;
    try {
        m.image_id = j.at("image_id").get<std::string>();
        m.image_w = j.at("image_w").get<std::uint32_t>();
        m.image_h = j.at("image_h").get<std::uint32_t>();
        m.pad_w = j.at("pad_w").get<std::uint32_t>();
        m.pad_h = j.at("pad_h").get<std::uint32_t>();
        m.patch_size = j.at("patch_size").get<std::uint32_t>();
        if (j.contains("feature_files")) {
            for (const auto& [role, path] : j.at("feature_files").items()) {
                m.feature_files[role] = path.get<std::string>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_violation, std::string("image manifest: ") + e.what());
    }
    validate(m);
    return m;
}

inline ImageManifest read_manifest(const std::filesystem::path& path) {
    const auto text = detail::slurp(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_violation, path.string() + ": " + e.what());
    }
    try {
        return manifest_from_json(j);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.detail());
    }
}

inline void write_manifest(const ImageManifest& m, const std::filesystem::path& path) {
    validate(m);
    detail::spill(path, to_json(m).dump(2) + "\n");
}

}  // namespace lostkit

// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lostkit {

enum class Errc {
    bad_magic,
    version_mismatch,
    size_mismatch,
    non_finite_value,
    io_failure,
    invariant_violation,
    index_out_of_range,
    geometry_mismatch,
    degenerate_box,
    empty_mask,
    k_too_large,
    dim_mismatch,
    non_finite_cost,
    empty_ground_truth,
    too_few_images,
    image_with_no_gt,
    missing_class_info,
    malformed_xml,
    missing_size,
    inverted_box,
    schema_violation,
    unknown_category,
    missing_feature_file,
    invalid_argument,
};

constexpr std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::bad_magic: return "bad-magic";
        case Errc::version_mismatch: return "version-mismatch";
        case Errc::size_mismatch: return "size-mismatch";
        case Errc::non_finite_value: return "non-finite-value";
        case Errc::io_failure: return "io-failure";
        case Errc::invariant_violation: return "invariant-violation";
        case Errc::index_out_of_range: return "index-out-of-range";
        case Errc::geometry_mismatch: return "geometry-mismatch";
        case Errc::degenerate_box: return "degenerate-box";
        case Errc::empty_mask: return "empty-mask";
        case Errc::k_too_large: return "k-too-large";
        case Errc::dim_mismatch: return "dim-mismatch";
        case Errc::non_finite_cost: return "non-finite-cost";
        case Errc::empty_ground_truth: return "empty-ground-truth";
        case Errc::too_few_images: return "too-few-images";
        case Errc::image_with_no_gt: return "image-with-no-gt";
        case Errc::missing_class_info: return "missing-class-info";
        case Errc::malformed_xml: return "malformed-xml";
        case Errc::missing_size: return "missing-size";
        case Errc::inverted_box: return "inverted-box";
        case Errc::schema_violation: return "schema-violation";
        case Errc::unknown_category: return "unknown-category";
        case Errc::missing_feature_file: return "missing-feature-file";
        case Errc::invalid_argument: return "invalid-argument";
    }
    return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

    Errc code() const noexcept { return code_; }
    /// The message without the code prefix, for re-wrapping with more context.
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

}  // namespace lostkit

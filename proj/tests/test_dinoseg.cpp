// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lostkit/dinoseg.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace lostkit;

namespace {

// Full sort by (value desc, index asc), keep floor(0.6 N), flood fill,
// largest component (earliest on ties), inclusive extent times P.
PixelBox oracle_head_box(std::span<const float> values, std::uint32_t h, std::uint32_t w, std::uint32_t patch) {
    const std::size_t n = values.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return values[a] != values[b] ? values[a] > values[b] : a < b;
    });
    std::vector<bool> bits(n, false);
    for (std::size_t i = 0; i < n * 6 / 10; ++i) bits[order[i]] = true;
    const auto comps = oracle::flood_fill(bits, h, w);
    std::size_t best = 0;
    for (std::size_t i = 0; i < comps.size(); ++i) {
        if (comps[i].size() > comps[best].size()) best = i;
    }
    std::uint32_t r0 = h, c0 = w, r1 = 0, c1 = 0;
    for (auto p : comps[best]) {
        r0 = std::min(r0, p / w);
        r1 = std::max(r1, p / w);
        c0 = std::min(c0, p % w);
        c1 = std::max(c1, p % w);
    }
    return make_box(c0 * patch, r0 * patch, (c1 + 1) * patch, (r1 + 1) * patch);
}

AttentionStack random_stack(std::mt19937_64& rng, std::uint32_t heads, std::uint32_t h, std::uint32_t w) {
    std::uniform_int_distribution<int> level(0, 9);  // coarse levels force ties
    AttentionStack att{heads, h, w, {}};
    for (std::size_t i = 0; i < std::size_t{heads} * h * w; ++i) att.data.push_back(float(level(rng)) / 10.0f);
    return att;
}

}  // namespace

TEST(Binarize, KeepsExactlySixTenths) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::uint32_t> side(1, 12);
        const auto h = side(rng), w = side(rng);
        if (h * w < 2) continue;
        const auto att = random_stack(rng, 1, h, w);
        const auto m = binarize_top_fraction(att.head(0), h, w);
        EXPECT_EQ(m.count(), (6 * h * w) / 10);
    }
    EXPECT_EQ(kept_entries(4), 2u);
    EXPECT_EQ(kept_entries(5), 3u);
    EXPECT_EQ(kept_entries(900), 540u);
}

TEST(HeadBox, SmallExample) {
    AttentionStack att{1, 2, 2, {0.5f, 0.3f, 0.1f, 0.1f}};
    EXPECT_EQ(head_box(att, 0, fixtures::grid_manifest(2, 2)), make_box(0, 0, 32, 16));
}

TEST(HeadBox, UniformTakesFirstIndices) {
    AttentionStack att{1, 2, 5, std::vector<float>(10, 0.2f)};
    const auto m = binarize_top_fraction(att.head(0), 2, 5);
    EXPECT_EQ(m.bits, (std::vector<bool>{true, true, true, true, true, true, false, false, false, false}));
}

TEST(HeadBox, SinglePatchIsEmptyMask) {
    AttentionStack att{1, 1, 1, {0.7f}};
    try {
        head_box(att, 0, fixtures::grid_manifest(1, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::empty_mask);
    }
    EXPECT_THROW(head_box(att, 1, fixtures::grid_manifest(1, 1)), Error);
}

TEST(HeadBox, MatchesSortFloodFillOracle) {
    std::mt19937_64 rng(77);
    const auto m = fixtures::grid_manifest(8, 8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto att = random_stack(rng, 1, 8, 8);
        EXPECT_EQ(head_box(att, 0, m), oracle_head_box(att.head(0), 8, 8, 16));
    }
}

TEST(SelectHead, SingleHeadAllStrategies) {
    std::mt19937_64 rng(2);
    const auto att = random_stack(rng, 1, 5, 5);
    const auto m = fixtures::grid_manifest(5, 5);
    const auto ref = head_box(att, 0, m);
    EXPECT_EQ(select_head_box(att, m, HeadSelection::fixed(0)), ref);
    EXPECT_EQ(select_head_box(att, m, HeadSelection::bcc()), ref);
    EXPECT_EQ(select_head_box(att, m, HeadSelection::haiou()), ref);
}

TEST(SelectHead, HaiouTieGoesToLowestHead) {
    std::mt19937_64 rng(3);
    auto att = random_stack(rng, 1, 4, 4);
    att.heads = 2;
    att.data.insert(att.data.end(), att.data.begin(), att.data.end());
    const auto d = select_head_box_detailed(att, fixtures::grid_manifest(4, 4), HeadSelection::haiou());
    EXPECT_EQ(d.head, 0u);
}

TEST(SelectHead, BccPicksLargestComponent) {
    // 1 x 10 grid keeps 6 cells per head. Largest runs: head 0 -> 4,
    // head 1 -> 6, head 2 -> 3.
    const std::vector<float> h0 = {1, 1, 1, 1, 0, 1, 1, 0, 0, 0};
    const std::vector<float> h1 = {0, 0, 1, 1, 1, 1, 1, 1, 0, 0};
    const std::vector<float> h2 = {1, 1, 1, 0, 1, 1, 0, 1, 0, 0};
    AttentionStack att{3, 1, 10, {}};
    for (const auto* h : {&h0, &h1, &h2}) att.data.insert(att.data.end(), h->begin(), h->end());
    const auto m = fixtures::grid_manifest(1, 10);
    EXPECT_EQ(head_box_detailed(att, 0, m).component_size, 4u);
    EXPECT_EQ(head_box_detailed(att, 1, m).component_size, 6u);
    EXPECT_EQ(head_box_detailed(att, 2, m).component_size, 3u);
    const auto d = select_head_box_detailed(att, m, HeadSelection::bcc());
    EXPECT_EQ(d.head, 1u);
    EXPECT_EQ(d.box, make_box(32, 0, 128, 16));
}

TEST(SelectHead, HaiouPicksConsensus) {
    // Heads 0 and 2 agree on the left block; head 1 is elsewhere.
    const std::vector<float> left = {1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    const std::vector<float> right = {0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    AttentionStack att{3, 1, 10, {}};
    for (const auto* h : {&right, &left, &left}) att.data.insert(att.data.end(), h->begin(), h->end());
    const auto d = select_head_box_detailed(att, fixtures::grid_manifest(1, 10), HeadSelection::haiou());
    EXPECT_EQ(d.head, 1u);
}

TEST(SelectHead, InvariantUnderPerHeadRescaling) {
    std::mt19937_64 rng(10);
    const auto m = fixtures::grid_manifest(6, 6);
    for (int trial = 0; trial < 20; ++trial) {
        auto att = random_stack(rng, 4, 6, 6);
        const auto bcc = select_head_box_detailed(att, m, HeadSelection::bcc());
        const auto hai = select_head_box_detailed(att, m, HeadSelection::haiou());
        for (std::uint32_t h = 0; h < 4; ++h) {
            const float s = std::ldexp(1.0f, int(h) - 2);
            for (std::size_t i = 0; i < 36; ++i) att.data[h * 36 + i] *= s;
        }
        EXPECT_EQ(select_head_box_detailed(att, m, HeadSelection::bcc()).head, bcc.head);
        EXPECT_EQ(select_head_box_detailed(att, m, HeadSelection::haiou()).head, hai.head);
    }
}

TEST(HeadSelection, Parse) {
    EXPECT_EQ(parse_head_selection("4").head, 4u);
    EXPECT_EQ(parse_head_selection("bcc").strategy, HeadSelection::Strategy::bcc);
    EXPECT_EQ(parse_head_selection("haiou").strategy, HeadSelection::Strategy::haiou);
    EXPECT_THROW(parse_head_selection("4x"), Error);
    EXPECT_THROW(parse_head_selection(""), Error);
}

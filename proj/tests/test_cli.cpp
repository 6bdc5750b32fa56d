// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "lostkit/cli_app.hpp"
#include "support/fixtures.hpp"

using namespace lostkit;
namespace fs = std::filesystem;

namespace {

struct Captured {
    int code = 0;
    std::string log;
};

Captured run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "lostkit");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    auto* previous = cli::diagnostics();
    cli::diagnostics() = &sink;
    Captured c;
    c.code = cli::run(int(argv.size()), argv.data());
    cli::diagnostics() = previous;
    c.log = sink.str();
    return c;
}

class CliTest : public ::testing::Test {
protected:
    CliTest() : tmp_("cli"), ds_(fixtures::write_fixture_dataset(tmp_.path() / "data", 8)) {}

    fs::path out(const std::string& name) const { return tmp_ / name; }

    fixtures::TempDir tmp_;
    fixtures::FixtureDataset ds_;
};

}  // namespace

TEST_F(CliTest, DetectRecoversPlantedBoxes) {
    const auto r = run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("p.jsonl").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto preds = read_predictions(out("p.jsonl"));
    ASSERT_EQ(preds.size(), ds_.images.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        EXPECT_EQ(preds[i].image_id, ds_.images[i].id);
        EXPECT_EQ(preds[i].box, fixtures::expected_box(ds_, ds_.images[i]));
        EXPECT_EQ(preds[i].method, "lost");
        EXPECT_TRUE(preds[i].seed.has_value());
    }
}

TEST_F(CliTest, DetectIsByteIdentical) {
    ASSERT_EQ(run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("a.jsonl").string()}).code, 0);
    ASSERT_EQ(run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("b.jsonl").string(),
                       "--threads", "3"})
                  .code,
              0);
    EXPECT_EQ(fixtures::read_file(out("a.jsonl")), fixtures::read_file(out("b.jsonl")));
}

TEST_F(CliTest, DetectModes) {
    for (const char* mode : {"query", "value", "sym-qk"}) {
        const auto r = run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--mode", mode, "--out",
                                out("m.jsonl").string()});
        EXPECT_EQ(r.code, 0) << mode << ": " << r.log;
    }
    const auto bad = run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--mode", "cls", "--out",
                              out("m.jsonl").string()});
    EXPECT_NE(bad.code, 0);
}

TEST_F(CliTest, LargeKWarnsAndVerbosePrintsStats) {
    const auto r = run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--k", "100000", "--verbose",
                            "--out", out("k.jsonl").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    EXPECT_NE(r.log.find("exceeds N"), std::string::npos);
    EXPECT_NE(r.log.find("degree min"), std::string::npos);
}

TEST_F(CliTest, MissingFeatureFile) {
    fs::remove(ds_.root / "features" / ds_.images[2].id / "key.lfea");
    const auto r = run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("p.jsonl").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.log.find("missing-feature-file"), std::string::npos);

    const auto skip = run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--skip-missing", "--out",
                               out("p.jsonl").string()});
    ASSERT_EQ(skip.code, 0) << skip.log;
    EXPECT_EQ(read_predictions(out("p.jsonl")).size(), ds_.images.size() - 1);
    EXPECT_NE(skip.log.find("skipped"), std::string::npos);
}

TEST_F(CliTest, EmptyDatasetGivesEmptyOutput) {
    std::ofstream(out("empty.json")) << R"({"images": []})";
    const auto r = run_cli({"detect", "--dataset", out("empty.json").string(), "--out", out("e.jsonl").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    EXPECT_TRUE(fs::exists(out("e.jsonl")));
    EXPECT_EQ(fs::file_size(out("e.jsonl")), 0u);
}

TEST_F(CliTest, BaselineFindsAttentionBlob) {
    for (const char* head : {"4", "bcc", "haiou"}) {
        const auto r = run_cli({"baseline", "--dataset", ds_.dataset_manifest.string(), "--head", head, "--out",
                                out("b.jsonl").string()});
        ASSERT_EQ(r.code, 0) << r.log;
        EXPECT_EQ(read_predictions(out("b.jsonl")).size(), ds_.images.size());
    }
    const auto bad = run_cli({"baseline", "--dataset", ds_.dataset_manifest.string(), "--head", "9", "--out",
                              out("b.jsonl").string()});
    EXPECT_EQ(bad.code, 1);
}

TEST_F(CliTest, EvalCorLocOnDetections) {
    ASSERT_EQ(run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("p.jsonl").string()}).code, 0);
    const auto r = run_cli({"eval", "--metric", "corloc", "--predictions", out("p.jsonl").string(), "--gt",
                            ds_.annotations.string(), "--out", out("r.json").string(), "--table",
                            out("r.txt").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto report = nlohmann::json::parse(fixtures::read_file(out("r.json")));
    EXPECT_DOUBLE_EQ(report["metrics"]["CorLoc"].get<double>(), 100.0);
    EXPECT_NE(fixtures::read_file(out("r.txt")).find("100.0"), std::string::npos);
}

TEST_F(CliTest, EvalCorLocFixtureFile) {
    // Three images with IoU 0.6, 0.4 and 0.51 against their single GT box.
    nlohmann::json coco = {{"categories", {{{"id", 1}, {"name", "thing"}}}}, {"images", nlohmann::json::array()},
                           {"annotations", nlohmann::json::array()}};
    std::vector<Detection> preds;
    const double heights[] = {60, 40, 51};
    for (int i = 0; i < 3; ++i) {
        coco["images"].push_back({{"id", i + 1}, {"file_name", "im" + std::to_string(i) + ".jpg"}, {"width", 100}, {"height", 100}});
        coco["annotations"].push_back(
            {{"id", i + 1}, {"image_id", i + 1}, {"category_id", 1}, {"bbox", {0, 0, 100, 100}}});
        Detection d;
        d.image_id = "im" + std::to_string(i);
        d.box = make_box(0, 0, 100, heights[i]);
        preds.push_back(d);
    }
    std::ofstream(out("gt.json")) << coco.dump();
    write_predictions(preds, out("p.jsonl"));
    const auto r = run_cli({"eval", "--metric", "corloc", "--predictions", out("p.jsonl").string(), "--gt",
                            out("gt.json").string(), "--out", out("r.json").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto report = nlohmann::json::parse(fixtures::read_file(out("r.json")));
    EXPECT_NEAR(report["metrics"]["CorLoc"].get<double>(), 66.67, 0.01);
}

TEST_F(CliTest, EvalOdApAndIdsFilter) {
    ASSERT_EQ(run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("p.jsonl").string()}).code, 0);
    std::ofstream(out("ids.txt")) << ds_.images[0].id << "\n" << ds_.images[1].id << "\n\n";
    const auto r = run_cli({"eval", "--metric", "odap", "--predictions", out("p.jsonl").string(), "--gt",
                            ds_.annotations.string(), "--ids", out("ids.txt").string(), "--out",
                            out("o.json").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto report = nlohmann::json::parse(fixtures::read_file(out("o.json")));
    EXPECT_DOUBLE_EQ(report["metrics"]["odAP50"].get<double>(), 100.0);
    EXPECT_EQ(report["counts"]["images"].get<int>(), 2);
}

TEST_F(CliTest, ClusterThenClassAwareAp) {
    ASSERT_EQ(run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("p.jsonl").string()}).code, 0);
    const auto c = run_cli({"cluster", "--descriptors", ds_.descriptors.string(), "--predictions",
                            out("p.jsonl").string(), "--gt", ds_.annotations.string(), "--seed", "3", "--out",
                            out("l.jsonl").string(), "--model-out", out("model.json").string(), "--map-out",
                            out("map.json").string(), "--neighbors-out", out("nn.json").string(), "--tau", "3"});
    ASSERT_EQ(c.code, 0) << c.log;
    const auto labeled = read_predictions(out("l.jsonl"));
    ASSERT_EQ(labeled.size(), ds_.images.size());
    for (const auto& d : labeled) EXPECT_TRUE(d.box.label.has_value());
    const auto model = nlohmann::json::parse(fixtures::read_file(out("model.json")));
    EXPECT_EQ(model["k"].get<int>(), 2);

    const auto ap = run_cli({"eval", "--metric", "ap", "--predictions", out("l.jsonl").string(), "--gt",
                             ds_.annotations.string(), "--cluster-map", out("map.json").string(), "--out",
                             out("ap.json").string()});
    ASSERT_EQ(ap.code, 0) << ap.log;
    const auto report = nlohmann::json::parse(fixtures::read_file(out("ap.json")));
    EXPECT_DOUBLE_EQ(report["metrics"]["mAP50"].get<double>(), 100.0);

    const auto ret = run_cli({"eval", "--metric", "corret", "--descriptors", ds_.descriptors.string(), "--gt",
                              ds_.annotations.string(), "--tau", "3", "--out", out("cr.json").string()});
    ASSERT_EQ(ret.code, 0) << ret.log;
    const auto cr = nlohmann::json::parse(fixtures::read_file(out("cr.json")));
    EXPECT_DOUBLE_EQ(cr["metrics"]["CorRet"].get<double>(), 100.0);
}

TEST_F(CliTest, TooManyClustersFails) {
    ASSERT_EQ(run_cli({"detect", "--dataset", ds_.dataset_manifest.string(), "--out", out("p.jsonl").string()}).code, 0);
    const auto r = run_cli({"cluster", "--descriptors", ds_.descriptors.string(), "--predictions",
                            out("p.jsonl").string(), "--clusters", "50", "--out", out("l.jsonl").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.log.find("k-too-large"), std::string::npos);
}

TEST(Cli, UsageErrors) {
    EXPECT_NE(run_cli({}).code, 0);
    EXPECT_NE(run_cli({"detect"}).code, 0);
    EXPECT_NE(run_cli({"frobnicate"}).code, 0);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
}

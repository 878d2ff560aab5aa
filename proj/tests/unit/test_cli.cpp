#include "swav/cli.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace swav;
using nlohmann::json;
using swav::testing::TempDir;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) {
    std::ifstream f(p);
    return json::parse(f);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

// Small enough to train in well under a second.
std::filesystem::path small_config(const TempDir& dir) {
    json cfg = {{"model", {{"preset", "tiny"}}},
                {"train", {{"epochs", 1}, {"batch_size", 8}}},
                {"synth", {{"n_videos", 6}}},
                {"window", {{"past_frame_s", 4}, {"past_narration_s", 8}}}};
    const auto p = dir / "cfg.json";
    std::ofstream(p) << cfg.dump();
    return p;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        cfg_ = small_config(dir_);
        const auto r = run({"synth-gen", "--config", cfg_.string(), "--run-dir", (dir_ / "data").string(), "--seed",
                            "3", "--labels", "40", "--votes", "--multi-view"});
        ASSERT_EQ(r.code, 0) << r.err;
        manifest_ = (dir_ / "data" / "manifest.jsonl").string();
    }

    TempDir dir_{"cli"};
    std::filesystem::path cfg_;
    std::string manifest_;
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate", "--run-dir", "x"}).code, 2);
    EXPECT_EQ(run({"synth-gen"}).code, 2);  // --run-dir is required
    TempDir dir("cli_usage");
    const auto r = run({"eval", "--run-dir", (dir / "e").string(), "--system", "baseline:oracle", "--manifest",
                        (dir / "none.jsonl").string()});
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, BadConfigIsReportedAsJson) {
    TempDir dir("cli_cfg");
    std::ofstream(dir / "bad.json") << R"({"train": {"epochz": 3}})";
    const auto r = run({"synth-gen", "--config", (dir / "bad.json").string(), "--run-dir", (dir / "run").string()});
    EXPECT_EQ(r.code, 2);
    const auto e = json::parse(r.err);
    EXPECT_EQ(e["error"]["kind"], "config_error");
    EXPECT_EQ(e["error"]["exit_code"], 2);
    EXPECT_EQ(read_json(dir / "run" / "error.json")["error"]["kind"], "config_error");

    std::ofstream(dir / "type.json") << R"({"train": {"epochs": "many"}})";
    EXPECT_EQ(run({"synth-gen", "--config", (dir / "type.json").string(), "--run-dir", (dir / "r2").string()}).code, 2);
}

TEST(Cli, MissingInputExitsOne) {
    TempDir dir("cli_io");
    const auto r = run({"train-detector", "--run-dir", (dir / "run").string(), "--manifest",
                        (dir / "missing.jsonl").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(json::parse(r.err)["error"]["kind"], "io_error");
}

TEST_F(CliTest, SynthGenWritesRunRecord) {
    const auto m = read_json(dir_ / "data" / "metrics.json");
    EXPECT_EQ(m["command"], "synth-gen");
    EXPECT_EQ(m["seed"], 3);
    EXPECT_TRUE(m.contains("config"));
    EXPECT_TRUE(std::filesystem::exists(dir_ / "data" / "config.json"));
    EXPECT_TRUE(std::filesystem::exists(dir_ / "data" / "log.txt"));
    EXPECT_TRUE(std::filesystem::exists(dir_ / "data" / "labels.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(dir_ / "data" / "votes.jsonl"));
}

TEST_F(CliTest, AllExoBaselineScoresHalf) {
    const auto r = run({"eval", "--config", cfg_.string(), "--run-dir", (dir_ / "exo").string(), "--manifest",
                        manifest_, "--system", "baseline:all_exo"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["status"], "ok");
    const auto m = read_json(dir_ / "exo" / "metrics.json");
    EXPECT_DOUBLE_EQ(m["balanced"]["accuracy"].get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(m["balanced"]["auc"].get<double>(), 0.5);
}

TEST_F(CliTest, TrainingIsDeterministic) {
    for (const char* d : {"a", "b"}) {
        const auto r = run({"train-detector", "--config", cfg_.string(), "--run-dir", (dir_ / d).string(), "--seed",
                            "5", "--manifest", manifest_});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(slurp(dir_ / "a" / "metrics.json"), slurp(dir_ / "b" / "metrics.json"));
    EXPECT_EQ(slurp(dir_ / "a" / "detector.ckpt"), slurp(dir_ / "b" / "detector.ckpt"));

    const auto e = run({"eval", "--config", cfg_.string(), "--run-dir", (dir_ / "ev").string(), "--manifest",
                        manifest_, "--checkpoint", (dir_ / "a" / "detector.ckpt").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto m = read_json(dir_ / "ev" / "metrics.json");
    EXPECT_TRUE(m["balanced"]["accuracy"].is_number());

    const auto s = run({"finetune-selector", "--config", cfg_.string(), "--run-dir", (dir_ / "sel").string(),
                        "--manifest", manifest_, "--labels", (dir_ / "data" / "labels.jsonl").string(), "--detector",
                        (dir_ / "a" / "detector.ckpt").string(), "--alpha", "0.3"});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_TRUE(std::filesystem::exists(dir_ / "sel" / "selector.ckpt"));
    EXPECT_EQ(run({"finetune-selector", "--config", cfg_.string(), "--run-dir", (dir_ / "sel2").string(),
                   "--manifest", manifest_, "--labels", (dir_ / "data" / "labels.jsonl").string(), "--detector",
                   (dir_ / "a" / "detector.ckpt").string(), "--alpha", "-1"})
                  .code,
              2);
}

TEST_F(CliTest, AblateRecordsInputsAndRejectsEmptyModel) {
    const auto r = run({"ablate", "--config", cfg_.string(), "--run-dir", (dir_ / "ab").string(), "--manifest",
                        manifest_, "--drop", "N,Nprime"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_json(dir_ / "ab" / "metrics.json")["inputs"], json::array({"F"}));
    EXPECT_EQ(run({"ablate", "--config", cfg_.string(), "--run-dir", (dir_ / "ab2").string(), "--manifest", manifest_,
                   "--drop", "F,N,Nprime"})
                  .code,
              2);
    EXPECT_EQ(run({"ablate", "--config", cfg_.string(), "--run-dir", (dir_ / "ab3").string(), "--manifest", manifest_,
                   "--drop", "X"})
                  .code,
              2);
}

TEST_F(CliTest, SweepRejectsMixedAxes) {
    EXPECT_EQ(run({"sweep", "--config", cfg_.string(), "--run-dir", (dir_ / "sw").string(), "--manifest", manifest_,
                   "--tf", "2", "--labels-n", "10"})
                  .code,
              2);
    EXPECT_EQ(run({"sweep", "--config", cfg_.string(), "--run-dir", (dir_ / "sw2").string(), "--manifest", manifest_})
                  .code,
              2);
    const auto r = run({"sweep", "--config", cfg_.string(), "--run-dir", (dir_ / "sw3").string(), "--manifest",
                        manifest_, "--tf", "2,4"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir_ / "sw3" / "point_000" / "detector.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(dir_ / "sw3" / "point_001" / "detector.ckpt"));
}

TEST_F(CliTest, AgreementFilterShrinksEvalSet) {
    std::vector<std::size_t> counts;
    for (const char* t : {"7/9", "8/9", "9/9"}) {
        const auto dir = dir_ / (std::string("agr") + t[0]);
        const auto r = run({"eval", "--config", cfg_.string(), "--run-dir", dir.string(), "--manifest", manifest_,
                            "--labels", (dir_ / "data" / "labels.jsonl").string(), "--votes",
                            (dir_ / "data" / "votes.jsonl").string(), "--agreement-threshold", t, "--system",
                            "baseline:last_frame"});
        ASSERT_EQ(r.code, 0) << r.err;
        counts.push_back(read_json(dir / "metrics.json")["n_instances"].get<std::size_t>());
    }
    EXPECT_GE(counts[0], counts[1]);
    EXPECT_GE(counts[1], counts[2]);
    EXPECT_LE(counts[0], 40u);
}

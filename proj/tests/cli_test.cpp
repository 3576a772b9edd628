#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "e2eload/cli.hpp"
#include "e2eload/formats.hpp"

namespace e2eload {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "e2eload");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("e2eload_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = dir_ / "small.cfg";
    std::ofstream(config_) << "# small model\n"
                              "model.tau = 2\nmodel.t_sample = 1\n"
                              "model.frame_height = 16\nmodel.frame_width = 16\n"
                              "model.patch_h = 8\nmodel.patch_w = 8\n"
                              "model.d_model = 16\nmodel.l_sb = 1\nmodel.l_sm = 2\nmodel.l_lc = 2\n"
                              "model.t_short = 4\nmodel.t_long = 4\n"
                              "model.lc_temporal_factors = 2,2\nmodel.lc_spatial_factor = 2\n"
                              "model.fusion_layer = 1\n"
                              "task.cue_distance = 1\ntask.action_len = 2\ntask.slot_slack = 1\n"
                              "task.stream_len = 4\ntask.event_rate = 1\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  fs::path config_;
};

TEST_F(CliTest, SelftestPasses) {
  const Result r = run({"selftest"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
}

TEST_F(CliTest, GenDataWritesStreamAndLabels) {
  const Result r = run({"--config", config_.string(), "--seed", "3", "--out", dir_.string(), "gen-data"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Frames f = read_rsv(dir_ / "stream.rsv");
  EXPECT_EQ(f.count, 8);
  EXPECT_EQ(f.height, 16);
  const std::string labels = slurp(dir_ / "labels.csv");
  EXPECT_EQ(labels.rfind("chunk_index,label\n0,", 0), 0u) << labels;
  EXPECT_EQ(std::count(labels.begin(), labels.end(), '\n'), 5);
}

TEST_F(CliTest, EfficientMatchesRegularOnShortStream) {
  ASSERT_EQ(run({"--config", config_.string(), "--out", dir_.string(), "gen-data"}).code, kExitOk);
  const std::vector<std::string> common{"--config", config_.string(), "--input", (dir_ / "stream.rsv").string(),
                                        "--labels", (dir_ / "labels.csv").string()};
  std::string preds[2];
  int i = 0;
  for (const std::string mode : {"regular", "efficient"}) {
    auto args = common;
    const fs::path out = dir_ / mode;
    args.insert(args.end(), {"--out", out.string(), "infer", "--preset", "baseline", "--mode", mode});
    const Result r = run(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    preds[i++] = slurp(out / "predictions.csv");
    EXPECT_EQ(slurp(out / "metrics.csv").rfind("metric,value\n", 0), 0u);
  }
  EXPECT_EQ(std::count(preds[0].begin(), preds[0].end(), '\n'), 5);
  EXPECT_EQ(preds[0], preds[1]);
}

TEST_F(CliTest, InferDumpsAttentionPerStep) {
  const Result r = run({"--config", config_.string(), "--out", dir_.string(), "infer", "--dump-attention"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (int s = 0; s < 4; ++s) {
    const std::string text = slurp(dir_ / "attention" / ("step_" + std::to_string(s) + ".csv"));
    EXPECT_EQ(text.rfind("layer,query_token,key_token,weight\n", 0), 0u) << s;
    EXPECT_GT(std::count(text.begin(), text.end(), '\n'), 1);
  }
}

TEST_F(CliTest, UnknownConfigKeyIsUsageErrorWithLine) {
  std::ofstream(dir_ / "bad.cfg") << "seed = 1\nmodel.depth = 3\n";
  const Result r = run({"--config", (dir_ / "bad.cfg").string(), "selftest"});
  EXPECT_EQ(r.code, kExitOk);  // selftest does not read the config
  const Result g = run({"--config", (dir_ / "bad.cfg").string(), "--out", dir_.string(), "gen-data"});
  EXPECT_EQ(g.code, kExitUsage);
  EXPECT_NE(g.err.find("bad.cfg:2:"), std::string::npos) << g.err;
}

TEST_F(CliTest, BadUsage) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"infer", "--mode"}).code, kExitUsage);
  EXPECT_EQ(run({"--config", config_.string(), "--out", dir_.string(), "infer", "--mode", "fast"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(CliTest, MissingInputFails) {
  const Result r = run({"--config", config_.string(), "--input", (dir_ / "nope.rsv").string(), "--out",
                        dir_.string(), "infer"});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, CheckpointFromTrainDrivesInference) {
  std::ofstream(config_, std::ios::app) << "task.stream_len = 40\ntrain.epochs = 1\ntrain.steps_per_epoch = 3\n"
                                           "train.batch_size = 2\ntrain.validation_chunks = 20\n";
  const Result t = run({"--config", config_.string(), "--out", (dir_ / "run").string(), "train"});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint_epoch1.e2ew"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "epochs.csv"));
  const Result i = run({"--config", config_.string(), "--checkpoint", (dir_ / "run" / "model.e2ew").string(),
                        "--out", (dir_ / "inf").string(), "infer"});
  EXPECT_EQ(i.code, kExitOk) << i.err;
  const Result e = run({"--config", config_.string(), "--checkpoint", (dir_ / "run" / "model.e2ew").string(),
                        "--out", (dir_ / "ev").string(), "eval-lengths"});
  EXPECT_EQ(e.code, kExitOk) << e.err;
  EXPECT_EQ(slurp(dir_ / "ev" / "eval_lengths.csv").rfind("t_long,accuracy,map\n", 0), 0u);
}

}  // namespace
}  // namespace e2eload

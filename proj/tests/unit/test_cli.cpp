#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfn_cli/cli.hpp"

namespace fs = std::filesystem;
using cfn::cli::run;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs each test inside an empty scratch directory so stray writes show up.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    saved_ = fs::current_path();
    dir_ = fs::temp_directory_path() /
           ("cfn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    fs::current_path(dir_);
  }
  void TearDown() override {
    fs::current_path(saved_);
    fs::remove_all(dir_);
  }

  std::vector<std::string> entries() const {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir_)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
  }

  fs::path saved_;
  fs::path dir_;
};

const std::vector<std::string> kTiny{"--set", "widths=4,4",      "--set", "K=4",
                                     "--set", "synth_count=60", "--set", "synth_test_count=30",
                                     "--set", "synth_size=8",   "--set", "batch=20",
                                     "--set", "eval_every=3",   "--iters", "6"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_F(CliTest, ParamsTable) {
  const auto r = call({"params", "--model", "cifar-cfn", "--fusion", "lc", "--out", "p"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto* s : {"1,286,698", "74,112", "768", "2,698", "6,558"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  EXPECT_TRUE(fs::exists("p/params.csv"));
  EXPECT_TRUE(fs::exists("p/manifest.cfg"));
  EXPECT_EQ(entries(), (std::vector<std::string>{"p"}));
  const auto conv = call({"params", "--model", "cifar-cfn", "--fusion", "conv", "--out", "p"});
  EXPECT_NE(conv.out.find("fusion                       4"), std::string::npos) << conv.out;
}

TEST_F(CliTest, ValidationErrorsExitOne) {
  const auto unknown_flag = call({"params", "--bogus"});
  EXPECT_EQ(unknown_flag.code, 1);
  EXPECT_NE(unknown_flag.err.find("Usage"), std::string::npos);
  EXPECT_EQ(call({"params", "--set", "colour=red", "--out", "p"}).code, 1);
  EXPECT_EQ(call({"params", "--fusion", "max", "--out", "p"}).code, 1);
  EXPECT_EQ(call({"frobnicate"}).code, 1);
  EXPECT_EQ(call({}).code, 1);
  std::ofstream("bad.cfg") << "lr = 1\nlr = 2\n";
  const auto dup = call({"params", "--config", "bad.cfg", "--out", "p"});
  EXPECT_EQ(dup.code, 1);
  EXPECT_NE(dup.err.find("lines 1 and 2"), std::string::npos) << dup.err;
}

TEST_F(CliTest, RuntimeErrorsExitTwo) {
  const auto r = call({"eval", "--checkpoint", "missing.ckpt", "--out", "e"});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, GradCheckSubset) {
  const auto r = call({"grad-check", "--op", "fuse_lc", "--op", "relu", "--seeds", "5", "--out", "g"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fuse_lc"), std::string::npos);
  const auto csv = slurp("g/grad_check.csv");
  EXPECT_NE(csv.find("relu"), std::string::npos);
  const auto all = call({"grad-check", "--all", "--seeds", "2", "--out", "g"});
  ASSERT_EQ(all.code, 0) << all.err;
  EXPECT_NE(all.out.find("graph"), std::string::npos) << all.out;
  // An impossible bound fails the run.
  EXPECT_EQ(call({"grad-check", "--op", "fc", "--seeds", "2", "--threshold", "0", "--no-graph", "--out", "g"}).code,
            2);
}

TEST_F(CliTest, TrainReplayIsBitwise) {
  const auto first = call(with({"train", "--out", "r1"}, kTiny));
  ASSERT_EQ(first.code, 0) << first.err;
  const auto log = slurp("r1/train_log.csv");
  EXPECT_EQ(log.substr(0, 23), "iter,lr,loss,top1,top5\n");
  const auto manifest = slurp("r1/manifest.cfg");
  EXPECT_NE(manifest.find("# command: train"), std::string::npos);
  EXPECT_NE(manifest.find("init_scheme"), std::string::npos);

  const auto second = call({"train", "--config", "r1/manifest.cfg", "--out", "r2"});
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(slurp("r2/train_log.csv"), log);
  EXPECT_EQ(slurp("r2/model.ckpt"), slurp("r1/model.ckpt"));
  EXPECT_EQ(entries(), (std::vector<std::string>{"r1", "r2"}));
}

TEST_F(CliTest, PipelineFromCheckpoint) {
  ASSERT_EQ(call(with({"train", "--out", "t"}, kTiny)).code, 0);
  const auto eval = call(with({"eval", "--checkpoint", "t/model.ckpt", "--split", "test", "--out", "e"}, kTiny));
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_TRUE(fs::exists("e/eval.csv"));

  ASSERT_EQ(call(with({"extract", "--checkpoint", "t/model.ckpt", "--split", "train", "--out", "x"}, kTiny)).code, 0);
  ASSERT_EQ(call(with({"extract", "--checkpoint", "t/model.ckpt", "--split", "test", "--out", "x"}, kTiny)).code, 0);
  const auto features = slurp("x/features_train.csv");
  EXPECT_EQ(features.substr(0, 18), "label,f0,f1,f2,f3\n");

  const auto probe = call({"probe", "--train-features", "x/features_train.csv", "--test-features",
                           "x/features_test.csv", "--epochs", "3", "--out", "pr"});
  ASSERT_EQ(probe.code, 0) << probe.err;
  EXPECT_TRUE(fs::exists("pr/probe.csv"));

  const auto ret = call({"retrieve", "--db", "x/features_test.csv", "--metric", "map", "--out", "rt"});
  ASSERT_EQ(ret.code, 0) << ret.err;
  EXPECT_TRUE(fs::exists("rt/rankings.csv"));
  EXPECT_TRUE(fs::exists("rt/metrics.csv"));

  const auto maps = call(with({"rank-maps", "--checkpoint", "t/model.ckpt", "--top", "2", "--out", "m"}, kTiny));
  ASSERT_EQ(maps.code, 0) << maps.err;
  EXPECT_TRUE(fs::exists("m/maps/ranking.csv"));

  const auto lc = call(with({"lc-weights", "--checkpoint", "t/model.ckpt", "--out", "lc"}, kTiny));
  ASSERT_EQ(lc.code, 0) << lc.err;
  EXPECT_EQ(slurp("lc/lc_branch_means.csv").substr(0, 19), "branch,mean_weight\n");

  ASSERT_EQ(call(with({"make-synth", "--out", "s"}, kTiny)).code, 0);
  EXPECT_TRUE(fs::exists("s/synthetic_train.ckpt"));

  // Only the named output directories were created.
  EXPECT_EQ(entries(), (std::vector<std::string>{"e", "lc", "m", "pr", "rt", "s", "t", "x"}));
}

TEST_F(CliTest, FreshLcWeightsAreOneOverS) {
  const auto r = call({"lc-weights", "--set", "branch_points=pool1,pool2", "--out", "lc"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp("lc/lc_branch_means.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    const double v = std::stod(line.substr(line.find(',') + 1));
    EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, 3);
}

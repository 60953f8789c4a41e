#include <gtest/gtest.h>

#ifdef MIPSLICE_HAVE_CLI

#include <json.hpp>

#include <sstream>

#include "cli.hpp"
#include "mipslice/mip.hpp"
#include "mipslice/training.hpp"
#include "test_support.hpp"

using mipslice::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = mipslice::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_suffix(const fs::path& dir, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) ++n;
  }
  return n;
}

std::vector<std::string> tiny_train(const fs::path& data, const fs::path& out) {
  return {"train", "--variant", "l3unet1d", "--data", data.string(), "-o", out.string(), "--epochs", "1",
          "--base-channels", "4", "--crop-h", "128", "--crop-w", "64", "--batch-size", "4"};
}

}  // namespace

TEST(Cli, GenerateThenPreprocess) {
  TempDir tmp;
  const auto gen = run({"--seed", "4", "gen-phantoms", "-n", "5", "-o", (tmp / "data").string()});
  ASSERT_EQ(gen.code, 0) << gen.err;
  const auto pre = run({"preprocess", (tmp / "data" / "volumes").string(), "-o", (tmp / "mips").string()});
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_EQ(count_suffix(tmp / "mips", ".frontal.png"), 5u);
  EXPECT_EQ(count_suffix(tmp / "mips", ".sagittal.png"), 5u);
  EXPECT_EQ(count_suffix(tmp / "mips", ".frontal.json"), 5u);
  // The generator's own MIPs carry extra noise, so only geometry must agree.
  const auto a = mipslice::load_mip(tmp / "mips" / "phantom_00002.frontal");
  const auto b = mipslice::load_mip(tmp / "data" / "phantom_00002.frontal");
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
  EXPECT_NEAR(a.slice_thickness_mm, b.slice_thickness_mm, 1e-6);  // NIfTI spacing is float32
  EXPECT_EQ(a.source_id, "phantom_00002");
}

TEST(Cli, TrainWritesCheckpointAndHistory) {
  TempDir tmp;
  ASSERT_EQ(run({"gen-phantoms", "-n", "10", "-o", (tmp / "data").string(), "--no-volumes"}).code, 0);
  const auto tr = run(tiny_train(tmp / "data", tmp / "run"));
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(tmp / "run" / "model.json"));
  EXPECT_TRUE(fs::exists(tmp / "run" / "config.txt"));
  const std::string history = mipslice::testing::slurp(tmp / "run" / "history.csv");
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 2);
  EXPECT_NE(tr.out.find("epoch 0 sigma 10"), std::string::npos) << tr.out;
}

TEST(Cli, UsageAndConfigErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"gen-phantoms", "-o", "x"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);

  TempDir tmp;
  ASSERT_EQ(run({"gen-phantoms", "-n", "2", "-o", (tmp / "data").string(), "--no-volumes"}).code, 0);
  {
    std::ofstream cfg(tmp / "bad.cfg");
    cfg << "variant = l3unet1d\nlearning_rat = 0.1\n";
  }
  auto args = tiny_train(tmp / "data", tmp / "run");
  args.push_back("--config");
  args.push_back((tmp / "bad.cfg").string());
  const auto bad = run(args);
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("learning_rat"), std::string::npos);

  const auto missing = run({"train", "--data", (tmp / "data").string(), "-o", (tmp / "run").string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(run({"evaluate", "--pred", (tmp / "nope").string(), "--ann", (tmp / "data" / "annotations.csv").string()}).code, 2);
}

TEST(Cli, FullChain) {
  TempDir tmp;
  ASSERT_EQ(run({"--seed", "8", "gen-phantoms", "-n", "6", "-o", (tmp / "data").string(), "--no-volumes"}).code, 0);
  ASSERT_EQ(run(tiny_train(tmp / "data", tmp / "run")).code, 0);
  const auto pr = run({"predict", "--model", (tmp / "run" / "model.json").string(), "--input", (tmp / "data").string(),
                       "-o", (tmp / "pred").string()});
  ASSERT_EQ(pr.code, 0) << pr.err;
  EXPECT_EQ(count_suffix(tmp / "pred", ".json"), 6u);
  EXPECT_EQ(count_suffix(tmp / "pred", ".overlay.png"), 6u);
  const auto pred = nlohmann::json::parse(mipslice::testing::slurp(tmp / "pred" / "phantom_00000.json"));
  EXPECT_EQ(pred["image_id"], "phantom_00000");
  EXPECT_TRUE(pred.contains("y_mm"));

  const auto ev = run({"evaluate", "--pred", (tmp / "pred").string(), "--ann", (tmp / "data" / "annotations.csv").string(),
                       "-o", (tmp / "eval.csv").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("l3unet1d"), std::string::npos);
  EXPECT_TRUE(fs::exists(tmp / "eval_stats.csv"));
  const std::string rows = mipslice::testing::slurp(tmp / "eval.csv");
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 7);

  const auto bm = run({"benchmark", "--models", (tmp / "run" / "model.json").string(), "--runs", "2", "--warmups", "0"});
  ASSERT_EQ(bm.code, 0) << bm.err;
  EXPECT_NE(bm.out.find("model"), std::string::npos);
}

#endif

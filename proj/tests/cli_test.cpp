#include <sys/wait.h>

#include <cstdlib>

#include <gtest/gtest.h>

#include "sceneadapt/experiments.hpp"

namespace sceneadapt {
namespace {

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("sceneadapt_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    atomic_write(root_ / "gen.json", R"({"scenes": [1, 2], "frames": 10, "width": 32, "height": 32})");
    atomic_write(root_ / "train.json",
                 "{\"dataset\": \"" + (root_ / "data").string() +
                     R"(", "net": {"width": 4, "depth": 2}, "epochs": 2, "iterations": 4, "eval_every_iterations": 2})");
    ASSERT_EQ(run("gen --config " + (root_ / "gen.json").string() + " --out " + (root_ / "data").string()), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  // Runs the CLI with stdout and stderr captured to `log`; returns the exit code.
  static int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + SCENEADAPT_CLI + " " + args + " > " + (root_ / "log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static std::string log() { return read_file(root_ / "log"); }
  static std::string train_cfg() { return "--config " + (root_ / "train.json").string(); }

  static inline fs::path root_;
};

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return out;
}

TEST_F(Cli, GenWithSeedIsByteIdentical) {
  const std::string cfg = "gen --config " + (root_ / "gen.json").string() + " --seed 7 --jobs 2 --out ";
  ASSERT_EQ(run(cfg + (root_ / "g1").string()), 0) << log();
  ASSERT_EQ(run(cfg + (root_ / "g2").string()), 0) << log();
  const auto a = tree(root_ / "g1"), b = tree(root_ / "g2");
  EXPECT_EQ(a.size(), 2u * 2u * 10u * 2u + 1u);
  EXPECT_EQ(a, b);
  ASSERT_EQ(run(cfg.substr(0, cfg.find("--seed")) + "--seed 8 --out " + (root_ / "g3").string()), 0);
  EXPECT_NE(tree(root_ / "g3"), a);
}

TEST_F(Cli, GenUnwritableOutputExitsTwo) {
  atomic_write(root_ / "blocker", "x");
  EXPECT_EQ(run("gen --config " + (root_ / "gen.json").string() + " --out " + (root_ / "blocker" / "data").string()), 2);
  EXPECT_FALSE(fs::exists(root_ / "blocker" / "data" / "manifest.json"));
}

TEST_F(Cli, InvalidConfigExitsOneWithLine) {
  atomic_write(root_ / "bad.json", "{\n  \"frames\": 10,\n  \"classes\": 9\n}\n");
  EXPECT_EQ(run("gen --config " + (root_ / "bad.json").string() + " --out " + (root_ / "bad").string()), 1);
  EXPECT_NE(log().find("bad.json:3"), std::string::npos) << log();
  EXPECT_EQ(run("train " + train_cfg() + " --set method=Magic --out " + (root_ / "x").string()), 1);
  EXPECT_NE(log().find("method"), std::string::npos);
  EXPECT_EQ(run("train " + train_cfg() + " --set target=Q1 --out " + (root_ / "x").string()), 1);
  EXPECT_NE(log().find("target"), std::string::npos);
  EXPECT_EQ(run("train " + train_cfg() + " --set method=NA --set target=A3 --out " + (root_ / "x").string()), 1);
  EXPECT_NE(log().find("target"), std::string::npos);
  EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, TrainEchoesConfigAndHonoursEnvOutput) {
  ASSERT_EQ(run("train " + train_cfg() + " --set method=FT --seed 3 --out " + (root_ / "ignored").string(),
                "SCENEADAPT_OUT=" + (root_ / "env_out").string()),
            0)
      << log();
  EXPECT_FALSE(fs::exists(root_ / "ignored"));
  const auto cfg = parse_experiment_config(load_config_file(root_ / "env_out" / "config.json"));
  EXPECT_EQ(cfg.method, Method::FT);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_TRUE(fs::exists(root_ / "env_out" / "best.ckpt"));
}

TEST_F(Cli, EvalWithoutSegmentationNetExitsThree) {
  Checkpoint c;
  DiscriminatorD<float> d(1);
  c.append(d.params());
  save_checkpoint(c, root_ / "d_only.ckpt");
  EXPECT_EQ(run("eval --checkpoint " + (root_ / "d_only.ckpt").string() + " --dataset " + (root_ / "data").string() +
                " --subset A1"),
            3);
  atomic_write(root_ / "garbage.ckpt", "not a checkpoint");
  EXPECT_EQ(run("eval --checkpoint " + (root_ / "garbage.ckpt").string() + " --dataset " + (root_ / "data").string() +
                " --subset A1"),
            3);
}

TEST_F(Cli, EvalPrintsMetricsTable) {
  ASSERT_EQ(run("train " + train_cfg() + " --set method=NA --out " + (root_ / "na").string()), 0) << log();
  ASSERT_EQ(run("eval --checkpoint " + (root_ / "na" / "best.ckpt").string() + " --dataset " + (root_ / "data").string() +
                " --subset B1 --split test --out " + (root_ / "na_eval").string()),
            0)
      << log();
  const std::string csv = read_file(root_ / "na_eval" / "eval_B1_test.csv");
  EXPECT_EQ(csv, read_file(root_ / "na" / "eval_target_test.csv"));
  EXPECT_EQ(csv.rfind("class,c_acc,m_iou\nAverage,", 0), 0u);
}

TEST_F(Cli, AblateEmitsThreeRowsPerAdaptationKind) {
  ASSERT_EQ(run("ablate " + train_cfg() + " --out " + (root_ / "abl").string()), 0) << log();
  const std::string csv = read_file(root_ / "abl" / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  for (const char* row : {"sem+rec,point-of-view,1,", "sem+gan,point-of-view,1,", "sem+rec+gan,point-of-view,1,",
                          "sem+rec,scene,1,", "sem+gan,scene,1,", "sem+rec+gan,scene,1,"})
    EXPECT_NE(csv.find(row), std::string::npos) << row;
  EXPECT_EQ(find_runs(root_ / "abl").size(), 6u);
}

TEST_F(Cli, ReportHasOneColumnPerMethod) {
  for (const char* m : {"NA", "SceneAdapt", "FT"})
    ASSERT_EQ(run("train " + train_cfg() + " --set method=" + m + " --out " + (root_ / "rep" / m).string()), 0) << log();
  ASSERT_EQ(run("report " + (root_ / "rep").string() + " --out " + (root_ / "rep_out").string()), 0) << log();
  const std::string csv = read_file(root_ / "rep_out" / "target_m_iou.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,FT,NA,SceneAdapt");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 1 + 8);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 8), "Average,");
  EXPECT_TRUE(fs::exists(root_ / "rep_out" / "source_c_acc.csv"));
  EXPECT_EQ(run("report " + (root_ / "nothing_here").string()), 2);
}

}  // namespace
}  // namespace sceneadapt

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace remir;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "remir");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() / ("remir_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  void write_small_config() {
    std::ofstream(p("small.cfg")) << "split.train:int = 8\nsplit.dev:int = 4\nsplit.test:int = 4\n"
                                     "synth.max_entities:int = 5\n";
  }
};

}  // namespace

TEST_F(Cli, PrintConfigListsDefaults) {
  const CliResult r = cli({"print-config"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, dump_config(RunConfig{}));
  const CliResult s = cli({"print-config", "--set", "train.inference_depth=2"});
  EXPECT_NE(s.out.find("train.inference_depth:int = 2"), std::string::npos);
}

TEST_F(Cli, BadConfigExitsWithOne) {
  std::ofstream(p("bad.cfg")) << "train.epochs:real = 2\n";
  const CliResult r = cli({"print-config", "--config", p("bad.cfg")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);
  EXPECT_EQ(cli({"print-config", "--set", "nope=1"}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"train", "--out", p("x")}).code, 1);
}

TEST_F(Cli, GenIsReproducibleAndCountsMatch) {
  write_small_config();
  ASSERT_EQ(cli({"gen", "--config", p("small.cfg"), "--out", p("a")}).code, 0);
  ASSERT_EQ(cli({"gen", "--config", p("small.cfg"), "--out", p("b")}).code, 0);
  for (const char* f : {"train.json", "dev.json", "test.json", "manifest.json"})
    EXPECT_EQ(read_file(p(std::string("a/") + f)), read_file(p(std::string("b/") + f))) << f;
  const auto manifest = nlohmann::json::parse(read_file(p("a/manifest.json")));
  const Corpus train = parse_docred(p("a/train.json"));
  EXPECT_EQ(train.documents.size(), 8u);
  const auto& m = manifest["splits"]["train"];
  std::size_t subset = 0;
  for (const auto& d : train.documents) subset += infer_subset(d.triples).size();
  EXPECT_EQ(m["infer_subset"].get<std::size_t>(), subset);
  EXPECT_EQ(m["composed"].get<std::size_t>() + m["accidental_chains"].get<std::size_t>(), subset);
  EXPECT_EQ(m["digest"], file_digest(p("a/train.json")));
}

TEST_F(Cli, TrainEvalAndSweep) {
  write_small_config();
  ASSERT_EQ(cli({"gen", "--config", p("small.cfg"), "--out", p("data")}).code, 0);
  const CliResult t = cli({"train", "--smoke", "--data-dir", p("data"), "--out", p("run")});
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"history.jsonl", "last.ckpt.json", "best.ckpt.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(p(std::string("run/") + f))) << f;
  std::ifstream hist(p("run/history.jsonl"));
  std::size_t lines = 0;
  for (std::string l; std::getline(hist, l);) ++lines;
  EXPECT_EQ(lines, 2u);

  const CliResult e = cli({"eval", "--checkpoint", p("run/best.ckpt.json"), "--data-dir", p("data"), "--out", p("ev")});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto report = nlohmann::json::parse(read_file(p("ev/report.json")));
  EXPECT_TRUE(fs::exists(p("ev/predictions.json")));

  const CliResult s = cli({"eval", "--checkpoint", p("run/best.ckpt.json"), "--data-dir", p("data"), "--out", p("sw"),
                     "--sweep", "0:0.8:0.1"});
  ASSERT_EQ(s.code, 0) << s.err;
  std::ifstream csv(p("sw/sweep.csv"));
  std::vector<std::string> rows;
  for (std::string l; std::getline(csv, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows[0], "rate,f1,ign_f1");
  const double f1 = std::stod(rows[1].substr(rows[1].find(',') + 1));
  EXPECT_EQ(rows[1].substr(0, 5), "0.00,");
  EXPECT_DOUBLE_EQ(f1, report["f1"].get<double>());
  EXPECT_EQ(rows[9].substr(0, 5), "0.80,");

  const CliResult r = cli({"train", "--data-dir", p("data"), "--out", p("run"), "--resume", p("run/last.ckpt.json"),
                     "--set", "train.epochs=2", "--smoke"});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, AblateWritesTables) {
  write_small_config();
  ASSERT_EQ(cli({"gen", "--config", p("small.cfg"), "--out", p("data")}).code, 0);
  std::ofstream(p("tiny.cfg")) << "train.epochs:int = 1\ntrain.hidden:int = 16\ntrain.pair_width:int = 16\n"
                                  "train.matrix_width:int = 16\ntrain.inference_depth:int = 1\n";
  const CliResult a = cli({"ablate", "--config", p("tiny.cfg"), "--data-dir", p("data"), "--out", p("ab"), "--modes",
                     "full,no_mir", "--seeds", "2"});
  ASSERT_EQ(a.code, 0) << a.err;
  std::ifstream runs(p("ab/runs.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(runs, l);) ++lines;
  EXPECT_EQ(lines, 5u);
  EXPECT_NE(read_file(p("ab/summary.txt")).find("no_mir"), std::string::npos);
  EXPECT_EQ(cli({"ablate", "--data-dir", p("data"), "--out", p("ab2"), "--modes", "bogus"}).code, 1);
}

TEST(MeanSd, SampleStandardDeviation) {
  const auto m = mean_sd({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.sd, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(mean_sd({7.0}).sd, 0.0);
}

TEST(Sweep, ParsesInclusiveRange) {
  const auto r = parse_sweep("0:0.8:0.1");
  ASSERT_EQ(r.size(), 9u);
  EXPECT_NEAR(r.back(), 0.8, 1e-12);
  EXPECT_THROW(parse_sweep("0:1"), ConfigError);
  EXPECT_THROW(parse_sweep("0.5:0.1:0.1"), ConfigError);
}

#ifdef REMIR_CLI_PATH
TEST(Binary, ExitCodes) {
  const std::string bin = REMIR_CLI_PATH;
  EXPECT_EQ(std::system((bin + " print-config > /dev/null").c_str()), 0);
  const int bad = std::system((bin + " print-config --set nope=1 2> /dev/null").c_str());
  EXPECT_TRUE(WIFEXITED(bad));
  EXPECT_EQ(WEXITSTATUS(bad), 1);
}
#endif

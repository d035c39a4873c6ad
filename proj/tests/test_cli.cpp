#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "efld/cli.hpp"
#include "efld/container.hpp"
#include "efld/image.hpp"
#include "test_util.hpp"

using namespace efld;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("efld_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

const std::vector<std::string> subcommands{"synth", "train", "eval", "quantize", "analyze", "export", "infer"};

}  // namespace

TEST_F(Cli, AnalyzeDefault) {
  const Result r = run({"analyze", "--config", "default"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("19.12"), std::string::npos) << r.out;
  EXPECT_NE(r.err.find("analyze"), std::string::npos);  // resolved config
  EXPECT_NE(run({"analyze", "--config", "default", "--variant", "conv-backbone"}).out.find("24.90"),
            std::string::npos);
  EXPECT_NE(run({"analyze", "--config", "default", "--variant", "pfld-head"}).out.find("19.05"), std::string::npos);
  ASSERT_EQ(run({"analyze", "--config", "default", "--json", path("cost.json")}).code, 0);
  const auto j = nlohmann::json::parse(slurp(path("cost.json")));
  EXPECT_EQ(j.at("macs").get<long long>(), 9562176);
}

TEST_F(Cli, UsageErrorsExitOne) {
  const Result unknown = run({"frobnicate"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("Usage"), std::string::npos) << unknown.err;
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"analyze", "--config", "default", "--bogus"}).code, 1);
  EXPECT_EQ(run({"analyze", "--config", "default", "--variant", "wide"}).code, 1);
  EXPECT_EQ(run({"--threads", "0", "analyze"}).code, 1);
}

TEST_F(Cli, VersionAndHelp) {
  const Result v = run({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("efld 1.0.0 (container format 1)"), std::string::npos) << v.out;
  const Result h = run({"--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_EQ(h.out, slurp(fs::path(EFLD_SNAPSHOT_DIR) / "help_main.txt"));
}

TEST_F(Cli, SubcommandHelpMatchesSnapshots) {
  const std::map<std::string, std::vector<std::string>> flags{
      {"synth", {"--count", "--size", "--formats", "--round-robin", "--noise", "--out"}},
      {"train", {"--config", "--data", "--out", "--log", "--heads", "--epochs", "--batch-size", "--input-size"}},
      {"eval", {"--model", "--data", "--format", "--report", "--ced", "--threshold", "--radius"}},
      {"quantize", {"--model", "--calib", "--out"}},
      {"analyze", {"--config", "--variant", "--json", "--heads", "--input-size"}},
      {"export", {"--model", "--heads", "--out"}},
      {"infer", {"--model", "--input", "--format", "--out"}}};
  for (const auto& s : subcommands) {
    const Result r = run({s, "--help"});
    EXPECT_EQ(r.code, 0) << s;
    EXPECT_EQ(r.out, slurp(fs::path(EFLD_SNAPSHOT_DIR) / ("help_" + s + ".txt"))) << s;
    for (const auto& f : flags.at(s)) EXPECT_NE(r.out.find(f), std::string::npos) << s << " " << f;
  }
}

TEST_F(Cli, EvalOnEmptyDatasetExitsTwo) {
  fs::create_directories(dir / "empty");
  std::ofstream(dir / "empty" / "annotations.jsonl").flush();
  ASSERT_EQ(run({"synth", "--count", "4", "--size", "16", "--out", path("d")}).code, 0);
  ASSERT_EQ(run({"train", "--config", "reduced", "--input-size", "16", "--epochs", "1", "--data", path("d"),
                 "--out", path("m.efld")})
                .code,
            0);
  const Result r = run({"eval", "--model", path("m.efld"), "--data", path("empty")});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_EQ(run({"eval", "--model", path("nothing.efld"), "--data", path("d")}).code, 2);
}

TEST_F(Cli, FullPipeline) {
  ASSERT_EQ(run({"--seed", "3", "synth", "--count", "12", "--size", "32", "--formats", "p51,p68", "--round-robin",
                 "--out", path("data")})
                .code,
            0);
  const Result train = run({"--seed", "4", "train", "--config", "reduced", "--input-size", "32", "--epochs", "3",
                            "--batch-size", "4", "--data", path("data"), "--out", path("m.efld"), "--log",
                            path("log.csv")});
  ASSERT_EQ(train.code, 0) << train.err;
  const std::string log = slurp(path("log.csv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4) << log;
  EXPECT_NE(log.find("loss_p51"), std::string::npos) << log;

  const Result eval = run({"eval", "--model", path("m.efld"), "--data", path("data"), "--format", "p51", "--report",
                           path("report.json"), "--ced", path("ced.csv")});
  ASSERT_EQ(eval.code, 0) << eval.err;
  const auto report = nlohmann::json::parse(slurp(path("report.json")));
  EXPECT_EQ(report.at("count").get<int>(), 6);
  EXPECT_EQ(slurp(path("ced.csv")).rfind("error,fraction\n", 0), 0u);

  ASSERT_EQ(run({"quantize", "--model", path("m.efld"), "--calib", path("data"), "--out", path("q.efld")}).code, 0);
  EXPECT_EQ(inspect(read_file(path("q.efld"))).flags, ContainerFlags::int8);
  ASSERT_EQ(run({"export", "--model", path("q.efld"), "--heads", "p51", "--out", path("q51.efld")}).code, 0);
  EXPECT_LT(fs::file_size(path("q51.efld")), fs::file_size(path("q.efld")));
  EXPECT_EQ(run({"export", "--model", path("q.efld"), "--heads", "p98", "--out", path("x.efld")}).code, 1);

  write_image(efld::testing::random_tensor<float>({20, 48, 3}, 5, 0.0, 1.0), path("wide.ppm"));
  for (const std::string model : {"q51.efld", "m.efld"}) {
    const Result infer = run({"infer", "--model", path(model), "--input", path("wide.ppm"), "--format", "p51"});
    ASSERT_EQ(infer.code, 0) << infer.err;
    const auto line = nlohmann::json::parse(infer.out.substr(0, infer.out.find('\n')));
    EXPECT_EQ(line.at("format"), "p51");
    ASSERT_EQ(line.at("points").size(), 51u);
    for (const auto& p : line.at("points")) {
      EXPECT_GE(p[0].get<double>(), 0.0);
      EXPECT_LE(p[0].get<double>(), 48.0);
      EXPECT_GE(p[1].get<double>(), 0.0);
      EXPECT_LE(p[1].get<double>(), 20.0);
    }
  }
  const Result missing = run({"infer", "--model", path("q51.efld"), "--input", path("wide.ppm"), "--format", "p68"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("p51"), std::string::npos) << missing.err;  // lists available heads

  const Result batch = run({"infer", "--model", path("m.efld"), "--input", path("data"), "--format", "p68"});
  ASSERT_EQ(batch.code, 0) << batch.err;
  EXPECT_EQ(std::count(batch.out.begin(), batch.out.end(), '\n'), 12);
}

TEST_F(Cli, TrainingIsDeterministic) {
  ASSERT_EQ(run({"--seed", "1", "synth", "--count", "6", "--size", "16", "--out", path("d")}).code, 0);
  for (const std::string tag : {"a", "b"}) {
    ASSERT_EQ(run({"--seed", "9", "train", "--config", "reduced", "--input-size", "16", "--epochs", "2", "--data",
                   path("d"), "--out", path(tag + ".efld"), "--log", path(tag + ".csv")})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(path("a.efld")), slurp(path("b.efld")));
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  ASSERT_EQ(run({"--seed", "10", "train", "--config", "reduced", "--input-size", "16", "--epochs", "2", "--data",
                 path("d"), "--out", path("c.efld")})
                .code,
            0);
  EXPECT_NE(slurp(path("a.efld")), slurp(path("c.efld")));
}

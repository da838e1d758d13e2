#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rkg/checkpoint.h"
#include "rkg/cli.h"

using namespace rkg;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

const fs::path kUmls = fs::path(RKG_DATA_DIR) / "umls";
const fs::path kFixtures = RKG_FIXTURE_DIR;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("rkg_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

  int train(const fs::path& config, const fs::path& data, const fs::path& out) const {
    cli::TrainArgs args;
    args.config = config;
    args.data = data;
    args.out = out;
    std::ostringstream log;
    return cli::guarded([&] { return cli::train(args, log); }, log);
  }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* kSmallFm =
    "mode = fm\nmodel = complex\ndim = 16\nlearning_rate = 0.1\nbatch_size = 500\nepochs = 2\n"
    "reciprocals = true\nentity_sides = object\nseed = 1\n";

}  // namespace

TEST_F(CliTest, TrainWritesArtifacts) {
  ASSERT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "out"), cli::kOk);
  for (const char* f : {cli::kBestCheckpoint, cli::kLastCheckpoint, cli::kLossLog, cli::kEpochLog, cli::kMetrics}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir_ / "out" / cli::kLockFile));
  const auto m = Json::parse(slurp(dir_ / "out" / cli::kMetrics));
  EXPECT_EQ(m["epochs"], 2);
  EXPECT_EQ(m["test"]["num_queries"], 2 * 661);
  const double mrr = m["test"]["mrr"];
  EXPECT_GT(mrr, 0.0);
  EXPECT_LE(mrr, 1.0);
}

TEST_F(CliTest, ZeroEpochsWritesInitialModel) {
  const std::string cfg = std::string(kSmallFm).replace(std::string(kSmallFm).find("epochs = 2"), 10, "epochs = 0");
  ASSERT_EQ(train(write("z.cfg", cfg), kUmls, dir_ / "out"), cli::kOk);
  const auto c = load_checkpoint(dir_ / "out" / cli::kLastCheckpoint);
  EXPECT_EQ(c.step, 0);
  EXPECT_EQ(c.epoch, 0);
  EXPECT_EQ(Json::parse(slurp(dir_ / "out" / cli::kMetrics))["steps"], 0);
}

TEST_F(CliTest, UnknownConfigKeyIsConfigError) {
  EXPECT_EQ(train(write("bad.cfg", std::string(kSmallFm) + "learning_rat = 0.1\n"), kUmls, dir_ / "out"),
            cli::kConfigError);
}

TEST_F(CliTest, MalformedDataIsDataError) {
  write("data/train.txt", "a\tr\tb\nbroken line\n");
  write("data/valid.txt", "a\tr\tb\n");
  write("data/test.txt", "a\tr\tb\n");
  EXPECT_EQ(train(write("a.cfg", kSmallFm), dir_ / "data", dir_ / "out"), cli::kDataError);
}

TEST_F(CliTest, MissingDataIsDataError) {
  EXPECT_EQ(train(write("a.cfg", kSmallFm), dir_ / "nowhere", dir_ / "out"), cli::kDataError);
}

TEST_F(CliTest, LockedOutputDirectoryIsRefused) {
  write("out/.lock", "");
  EXPECT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "out"), cli::kConfigError);
  EXPECT_FALSE(fs::exists(dir_ / "out" / cli::kMetrics));
}

TEST_F(CliTest, EvalRejectsMismatchedVocabulary) {
  ASSERT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "out"), cli::kOk);
  write("other/train.txt", "a\tr\tb\nb\tr\tc\n");
  write("other/valid.txt", "a\tr\tc\n");
  write("other/test.txt", "c\tr\ta\n");
  cli::EvalArgs args;
  args.checkpoint = dir_ / "out" / cli::kBestCheckpoint;
  args.data = dir_ / "other";
  std::ostringstream out, err;
  EXPECT_EQ(cli::guarded([&] { return cli::eval(args, out); }, err), cli::kCompatibilityError);
}

TEST_F(CliTest, InductiveNeedsSharedRelations) {
  const std::string cfg =
      "mode = refactor\nmodel = distmult\ndim = 8\nlayers = 2\nlearning_rate = 0.1\nbatch_size = 256\n"
      "epochs = 1\nreciprocals = true\nseed = 0\n";
  ASSERT_EQ(train(write("r.cfg", cfg), kUmls, dir_ / "out"), cli::kOk);
  write("ind/train.txt", "x\tnot_a_umls_relation\ty\n");
  write("ind/valid.txt", "x\tnot_a_umls_relation\ty\n");
  write("ind/test.txt", "y\tnot_a_umls_relation\tx\n");
  cli::InductiveArgs args;
  args.checkpoint = dir_ / "out" / cli::kBestCheckpoint;
  args.ind = dir_ / "ind";
  std::ostringstream out, err;
  EXPECT_EQ(cli::guarded([&] { return cli::inductive(args, out); }, err), cli::kCompatibilityError);
}

TEST_F(CliTest, InductiveRejectsFmCheckpoint) {
  ASSERT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "out"), cli::kOk);
  cli::InductiveArgs args;
  args.checkpoint = dir_ / "out" / cli::kBestCheckpoint;
  args.ind = kUmls;
  std::ostringstream out, err;
  EXPECT_EQ(cli::guarded([&] { return cli::inductive(args, out); }, err), cli::kConfigError);
}

TEST_F(CliTest, PartialRankingIsReproducibleAndSeeded) {
  ASSERT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "out"), cli::kOk);
  const auto run = [&](std::uint64_t seed) {
    cli::EvalArgs args;
    args.checkpoint = dir_ / "out" / cli::kBestCheckpoint;
    args.data = kUmls;
    args.protocol = Protocol::Partial50;
    args.seed = seed;
    std::ostringstream out, err;
    EXPECT_EQ(cli::guarded([&] { return cli::eval(args, out); }, err), cli::kOk);
    return out.str();
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST_F(CliTest, EvalWritesReportFiles) {
  ASSERT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "out"), cli::kOk);
  cli::EvalArgs args;
  args.checkpoint = dir_ / "out" / cli::kBestCheckpoint;
  args.data = kUmls;
  args.split = "valid";
  args.out = dir_ / "report";
  std::ostringstream out, err;
  ASSERT_EQ(cli::guarded([&] { return cli::eval(args, out); }, err), cli::kOk);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "valid_full.json"));
  EXPECT_TRUE(fs::exists(dir_ / "report" / "valid_full_ranks.tsv"));
  args.split = "train";
  EXPECT_EQ(cli::guarded([&] { return cli::eval(args, out); }, err), cli::kConfigError);
}

TEST_F(CliTest, ResumeMatchesUninterruptedRun) {
  ASSERT_EQ(train(write("a.cfg", kSmallFm), kUmls, dir_ / "full"), cli::kOk);
  const std::string one = std::string(kSmallFm).replace(std::string(kSmallFm).find("epochs = 2"), 10, "epochs = 1");
  ASSERT_EQ(train(write("b.cfg", one), kUmls, dir_ / "part"), cli::kOk);

  // The resumed run takes its config from the checkpoint, so raise the epoch
  // count there.
  auto c = load_checkpoint(dir_ / "part" / cli::kLastCheckpoint);
  c.config.train.epochs = 2;
  save_checkpoint(c, dir_ / "part" / "resume.ckpt", false);
  cli::TrainArgs args;
  args.resume = dir_ / "part" / "resume.ckpt";
  args.data = kUmls;
  args.out = dir_ / "part";
  std::ostringstream log;
  ASSERT_EQ(cli::guarded([&] { return cli::train(args, log); }, log), cli::kOk);
  const auto a = load_checkpoint(dir_ / "full" / cli::kLastCheckpoint);
  const auto b = load_checkpoint(dir_ / "part" / cli::kLastCheckpoint);
  EXPECT_EQ(a.step, b.step);
  EXPECT_TRUE(a.params.entities.values == b.params.entities.values);
  EXPECT_TRUE(a.params.relations.values == b.params.relations.values);
  EXPECT_EQ(slurp(dir_ / "full" / cli::kLossLog), slurp(dir_ / "part" / cli::kLossLog));
}

TEST_F(CliTest, GoldenCheckpointReproducesStoredMetrics) {
  const auto expected = Json::parse(slurp(kFixtures / "umls_golden.json"));
  cli::EvalArgs args;
  args.checkpoint = kFixtures / "umls_golden.ckpt";
  args.data = kUmls;
  std::ostringstream out, err;
  ASSERT_EQ(cli::guarded([&] { return cli::eval(args, out); }, err), cli::kOk) << err.str();
  const auto got = Json::parse(out.str());
  EXPECT_NEAR(got["mrr"].get<double>(), expected["mrr"].get<double>(), 1e-9);
  for (const char* k : {"1", "3", "10"}) {
    EXPECT_NEAR(got["hits"][k].get<double>(), expected["hits"][k].get<double>(), 1e-9) << k;
  }
}

TEST(Verify, PassesAndDetectsPerturbation) {
  std::ostringstream out;
  EXPECT_EQ(cli::verify({}, out), cli::kOk);
  cli::VerifyArgs bad;
  bad.perturb_gradient = true;
  std::ostringstream out2;
  EXPECT_EQ(cli::verify(bad, out2), cli::kOracleFailure);
  EXPECT_NE(out2.str().find("FAIL"), std::string::npos);
}

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "test_support.hpp"

using namespace tensortree;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tensortree");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const fs::path& p) {
  const auto lines = read_lines(p);
  return static_cast<std::size_t>(
      std::count_if(lines.begin(), lines.end(), [](const std::string& l) { return !l.empty(); }));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tensortree_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // A small boolean directory that trains in well under a second.
  std::string small_bool(std::size_t L = 2, const std::string& counts = "80,30,30") {
    const std::string out = path("bool" + std::to_string(L));
    const auto r = run_cli({"gen-bool", "--outdegree", std::to_string(L), "--seed", "3", "--out",
                            out, "--counts", counts, "--heights", "2,3"});
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenBoolCountsAndDeterminism) {
  const auto a = run_cli({"gen-bool", "--outdegree", "2", "--seed", "7", "--out", path("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(count_lines(path("a") + "/train.txt"), 7000u);
  EXPECT_EQ(count_lines(path("a") + "/valid.txt"), 1000u);
  EXPECT_EQ(count_lines(path("a") + "/test.txt"), 2000u);
  ASSERT_EQ(run_cli({"gen-bool", "--outdegree", "2", "--seed", "7", "--out", path("b")}).code, 0);
  for (const char* f : {"train.txt", "valid.txt", "test.txt", "metadata.txt"})
    EXPECT_EQ(read_file(path("a") + "/" + f), read_file(path("b") + "/" + f)) << f;
  const auto meta = read_metadata(path("a") + "/metadata.txt");
  EXPECT_EQ(meta.at("outdegree"), "2");
  EXPECT_EQ(meta.at("seed"), "7");
  EXPECT_EQ(meta.at("counts"), "7000,1000,2000");
}

TEST_F(CliTest, GenBoolUsageErrors) {
  EXPECT_EQ(run_cli({"gen-bool", "--outdegree", "6", "--seed", "1", "--out", path("x")}).code,
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-bool", "--seed", "1", "--out", path("x")}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-bool", "--outdegree", "2", "--seed", "1", "--out", path("x"),
                     "--counts", "1,2"})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
}

TEST_F(CliTest, TrainRequiresRankForDecomposedModels) {
  const auto data = small_bool();
  const auto r = run_cli({"train", "--task", "bool", "--model", "canonical", "--hidden", "4",
                          "--data", data, "--seed", "0", "--metrics", path("m.csv"),
                          "--checkpoint", path("ck.txt")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--rank"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("m.csv")));
}

TEST_F(CliTest, TrainWritesMetricsAndCheckpoint) {
  const auto data = small_bool();
  const auto r = run_cli({"train", "--task", "bool", "--model", "tt", "--hidden", "4", "--rank",
                          "2", "--data", data, "--seed", "5", "--metrics", path("m.csv"),
                          "--checkpoint", path("ck.txt"), "--max-epochs", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = read_lines(path("m.csv"));
  EXPECT_EQ(lines[0], "run_id,seed,epoch,split,loss,accuracy,seconds");
  EXPECT_EQ(lines.size(), 1u + 2 * 3 + 1);
  EXPECT_EQ(lines.back().rfind("tt_c4_r2,5,", 0), 0u) << lines.back();

  const Checkpoint ck = load_checkpoint(path("ck.txt"));
  EXPECT_EQ(ck.meta.at("head"), "linear");
  EXPECT_EQ(ck.meta.at("seed"), "5");
  const TreeClassifier m = model_from_checkpoint(ck);
  ASSERT_EQ(m.head().layers.size(), 1u);
  EXPECT_EQ(m.head().layers[0].out_dim(), 2u);

  // A second run appends without repeating the header.
  ASSERT_EQ(run_cli({"train", "--task", "bool", "--model", "sum", "--hidden", "4", "--data", data,
                     "--seed", "5", "--metrics", path("m.csv"), "--checkpoint", path("ck2.txt"),
                     "--max-epochs", "1"})
                .code,
            0);
  const auto more = read_lines(path("m.csv"));
  EXPECT_EQ(std::count(more.begin(), more.end(), lines[0]), 1);
}

TEST_F(CliTest, ListOpsUsesMlpHead) {
  ASSERT_EQ(run_cli({"gen-listops", "--seed", "2", "--out", path("lo"), "--counts", "60,20,20",
                     "--max-depth", "2"})
                .code,
            0);
  const auto r = run_cli({"train", "--task", "listops", "--model", "canonical", "--hidden", "4",
                          "--rank", "2", "--data", path("lo"), "--seed", "0", "--metrics",
                          path("m.csv"), "--checkpoint", path("ck.txt"), "--max-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const TreeClassifier m = model_from_checkpoint(load_checkpoint(path("ck.txt")));
  EXPECT_EQ(m.head().kind, HeadKind::Mlp2x20);
  ASSERT_EQ(m.head().layers.size(), 3u);
  EXPECT_EQ(m.head().layers[0].out_dim(), 20u);
  EXPECT_EQ(m.head().layers[1].out_dim(), 20u);
  EXPECT_EQ(m.head().layers[2].out_dim(), 10u);
}

TEST_F(CliTest, EvalMatchesLibraryEvaluate) {
  const auto data = small_bool(3);
  ASSERT_EQ(run_cli({"train", "--task", "bool", "--model", "canonical", "--hidden", "4", "--rank",
                     "2", "--data", data, "--seed", "1", "--metrics", path("m.csv"),
                     "--checkpoint", path("ck.txt"), "--max-epochs", "2"})
                .code,
            0);
  const auto r = run_cli({"eval", "--checkpoint", path("ck.txt"), "--data", data + "/test.txt"});
  ASSERT_EQ(r.code, 0) << r.err;
  const TreeClassifier m = model_from_checkpoint(load_checkpoint(path("ck.txt")));
  const double expected = evaluate(m, read_samples(data + "/test.txt", Task::Boolean));
  std::ostringstream want;
  want << "accuracy " << expected << "\n";
  EXPECT_EQ(r.out, want.str());
}

TEST_F(CliTest, EvalOnOwnTrainingSetAfterFitting) {
  const auto data = small_bool(2, "12,4,4");
  fs::copy_file(data + "/train.txt", data + "/valid.txt", fs::copy_options::overwrite_existing);
  ASSERT_EQ(run_cli({"train", "--task", "bool", "--model", "canonical", "--hidden", "8", "--rank",
                     "4", "--data", data, "--seed", "0", "--metrics", path("m.csv"),
                     "--checkpoint", path("ck.txt"), "--max-epochs", "150", "--patience", "150",
                     "--batch-size", "4"})
                .code,
            0);
  const auto r = run_cli({"eval", "--checkpoint", path("ck.txt"), "--data", data + "/train.txt"});
  EXPECT_EQ(r.out, "accuracy 1\n");
}

TEST_F(CliTest, EvalErrors) {
  atomic_write(path("bad.txt"), "tensortree-checkpoint 9\nend\n");
  const auto data = small_bool();
  auto r = run_cli({"eval", "--checkpoint", path("bad.txt"), "--data", data + "/test.txt"});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("version"), std::string::npos) << r.err;
  atomic_write(path("junk.txt"), "\x01\x02 not a checkpoint");
  EXPECT_EQ(run_cli({"eval", "--checkpoint", path("junk.txt"), "--data", data + "/test.txt"}).code,
            cli::kExitData);
  EXPECT_EQ(run_cli({"eval", "--checkpoint", path("none.txt"), "--data", data + "/test.txt"}).code,
            cli::kExitIo);
}

TEST_F(CliTest, DataErrorsAndMissingFiles) {
  EXPECT_EQ(run_cli({"train", "--task", "bool", "--model", "sum", "--hidden", "4", "--data",
                     path("nowhere"), "--seed", "0", "--metrics", path("m.csv"), "--checkpoint",
                     path("ck.txt")})
                .code,
            cli::kExitIo);
  const auto data = small_bool();
  atomic_write(data + "/valid.txt", "1\t(AND 1 (OR 0 1)\n");
  const auto r = run_cli({"train", "--task", "bool", "--model", "sum", "--hidden", "4", "--data",
                          data, "--seed", "0", "--metrics", path("m.csv"), "--checkpoint",
                          path("ck.txt")});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("valid.txt"), std::string::npos) << r.err;
}

TEST_F(CliTest, GridOneCellAndParamColumn) {
  const auto data = small_bool();
  atomic_write(path("grid.cfg"), "task = bool\ndata = " + data +
                                     "\nmodels = canonical\nhidden = 4\nrank = 3\n"
                                     "seeds = 0\nmax_epochs = 2\n");
  const auto r = run_cli({"grid", "--config", path("grid.cfg"), "--out-table", path("t.csv"),
                          "--metrics", path("gm.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = read_lines(path("t.csv"));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0] + "\n", grid_csv_header());
  const std::string expected_prefix =
      "canonical,4,3," + std::to_string(param_count(AggregatorKind::Canonical, 4, 2, 3)) + ",";
  EXPECT_EQ(lines[1].rfind(expected_prefix, 0), 0u) << lines[1];
  EXPECT_TRUE(fs::exists(path("gm.csv")));
}

TEST_F(CliTest, GridRejectsUnknownKey) {
  atomic_write(path("grid.cfg"), "task = bool\ndata = x\nlayers = 3\n");
  const auto r = run_cli({"grid", "--config", path("grid.cfg"), "--out-table", path("t.csv")});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("layers"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("t.csv")));
}

TEST_F(CliTest, WorkerEnvironmentVariable) {
  const auto data = small_bool();
  atomic_write(path("grid.cfg"), "task = bool\ndata = " + data +
                                     "\nmodels = sum\nhidden = 2, 3\nseeds = 0\nmax_epochs = 1\n");
  ::setenv(cli::kWorkersEnv, "zero", 1);
  EXPECT_EQ(run_cli({"grid", "--config", path("grid.cfg"), "--out-table", path("t.csv")}).code,
            cli::kExitUsage);
  ::setenv(cli::kWorkersEnv, "2", 1);
  const auto two = run_cli({"grid", "--config", path("grid.cfg"), "--out-table", path("t2.csv")});
  ::unsetenv(cli::kWorkersEnv);
  const auto one = run_cli({"grid", "--config", path("grid.cfg"), "--out-table", path("t1.csv")});
  ASSERT_EQ(two.code, 0) << two.err;
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(read_file(path("t1.csv")), read_file(path("t2.csv")));
}

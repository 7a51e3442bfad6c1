#include <algorithm>
#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "tempologic/cli.hpp"
#include "tempologic/errors.hpp"
#include "tempologic/model_io.hpp"
#include "test_util.hpp"

using namespace tempologic;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Generated corpus plus a short training schedule, shared by the tests
// below.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus_ = (dir_.path() / "g1.jsonl").string();
    config_ = (dir_.path() / "quick.json").string();
    const json cfg = {{"train",
                       {{"max_epochs", 300},
                        {"min_epochs", 50},
                        {"patience", 30},
                        {"polish_epochs", 50},
                        {"local_search_rounds", 1},
                        {"samples_per_step", 8},
                        {"restarts", 2},
                        {"refine_epochs", 40}}}};
    testutil::write_file(config_, cfg.dump());
    const auto r = run({"generate", "--preset", "group1", "--n", "300", "--seed", "3", "--out", corpus_});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }

  std::string path(const std::string& name) const { return (dir_.path() / name).string(); }

  CliRun train(const std::string& out, int workers) {
    return run({"train", "--data", corpus_, "--out", out, "--config", config_, "--seed", "17", "--deterministic",
                "--workers", std::to_string(workers)});
  }

  testutil::TempDir dir_;
  std::string corpus_;
  std::string config_;
};

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("train"), std::string::npos);
}

TEST(Cli, UsageErrorsAreConfigErrors) {
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(run({"generate", "--preset", "group1", "--out", "x.jsonl"}).code, kExitConfig);  // no --n
  EXPECT_EQ(run({"generate", "--preset", "group9", "--n", "5", "--out", "x.jsonl"}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--data", "x.jsonl"}).code, kExitConfig);  // no --out
}

TEST(Cli, DeterministicRequiresSeed) {
  testutil::TempDir dir;
  const auto out = (dir.path() / "c.jsonl").string();
  const auto r = run({"generate", "--preset", "group1", "--n", "5", "--deterministic", "--out", out});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("--seed"), std::string::npos) << r.err;
}

TEST(Cli, MissingInputIsIoError) {
  testutil::TempDir dir;
  const auto r = run({"train", "--data", (dir.path() / "absent.jsonl").string(), "--out",
                      (dir.path() / "m.json").string(), "--seed", "1"});
  EXPECT_EQ(r.code, kExitIo);
  EXPECT_EQ(run({"inspect", "--model", (dir.path() / "absent.json").string()}).code, kExitIo);
}

TEST(Cli, GenerateWithoutSeedReportsIt) {
  testutil::TempDir dir;
  const auto out = (dir.path() / "c.jsonl").string();
  const auto r = run({"generate", "--preset", "group2", "--n", "4", "--out", out});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.err.rfind("seed: ", 0), 0u) << r.err;
}

TEST_F(CliTest, GenerateWritesCorpusAndAssignments) {
  // Header line plus one line per sequence.
  EXPECT_EQ(count_lines(testutil::read_file(corpus_)), 301u);
  EXPECT_EQ(load_corpus(corpus_).size(), 300u);
  const auto side = json::parse(testutil::read_file(path("g1.assign.json")));
  EXPECT_EQ(side["seed"], 3);
  EXPECT_EQ(side["assignments"].size(), 300u);
  EXPECT_TRUE(side.contains("spec"));

  // Same seed, same bytes.
  const auto again = path("again.jsonl");
  ASSERT_EQ(run({"generate", "--preset", "group1", "--n", "300", "--seed", "3", "--workers", "4", "--out", again})
                .code,
            kExitOk);
  EXPECT_EQ(testutil::read_file(again), testutil::read_file(corpus_));
}

TEST_F(CliTest, UnknownConfigKeyIsRejected) {
  const auto bad = path("bad.json");
  testutil::write_file(bad, R"({"train": {"max_epochs": 10, "learning_rat": 0.1}})");
  const auto r = run({"train", "--data", corpus_, "--out", path("m.json"), "--config", bad, "--seed", "1"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos) << r.err;
  testutil::write_file(bad, "[1, 2");
  EXPECT_EQ(run({"train", "--data", corpus_, "--out", path("m.json"), "--config", bad, "--seed", "1"}).code,
            kExitConfig);
}

TEST_F(CliTest, MalformedCorpusIsConfigError) {
  const auto bad = path("bad.jsonl");
  testutil::write_file(bad, "this is not a corpus\n");
  EXPECT_EQ(run({"train", "--data", bad, "--out", path("m.json"), "--seed", "1"}).code, kExitConfig);
}

TEST_F(CliTest, TrainEvaluatePredictInspect) {
  const auto model_path = path("model.json");
  const auto r = train(model_path, 1);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("refined model:\nb0 = "), std::string::npos) << r.out;
  const auto listing = testutil::read_file(path("model.rules.txt"));
  EXPECT_EQ(listing.rfind("b0 = ", 0), 0u);
  const auto model = load_model(model_path);
  EXPECT_EQ(listing, rule_listing(model));
  EXPECT_EQ(model.num_predicates, 30);

  const auto ev = run({"evaluate", "--model", model_path, "--data", corpus_, "--truth", "group1", "--csv",
                       path("eval.csv")});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  const auto report = json::parse(ev.out);
  EXPECT_TRUE(report.contains("accuracy"));
  EXPECT_TRUE(report.contains("event_mae"));
  EXPECT_GT(report["event_mae"].get<double>(), 0.0);
  EXPECT_EQ(testutil::read_file(path("eval.csv")).rfind("repetition,accuracy,weight_mae,event_mae,seconds", 0),
            0u);

  // Without truth only the data metrics are reported.
  const auto ev2 = run({"evaluate", "--model", model_path, "--data", corpus_});
  ASSERT_EQ(ev2.code, kExitOk) << ev2.err;
  EXPECT_FALSE(json::parse(ev2.out).contains("accuracy"));

  const auto preds = path("pred.jsonl");
  ASSERT_EQ(run({"predict", "--model", model_path, "--data", corpus_, "--out", preds}).code, kExitOk);
  const auto text = testutil::read_file(preds);
  EXPECT_EQ(count_lines(text), 300u);
  std::istringstream lines(text);
  std::string line;
  std::size_t i = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["sequence"], i++);
    EXPECT_GT(j["predicted"].get<double>(), j["t_last"].get<double>());
  }
  const auto at = run({"predict", "--model", model_path, "--data", corpus_, "--t-last", "10"});
  ASSERT_EQ(at.code, kExitOk);
  EXPECT_EQ(count_lines(at.out), 300u);
  EXPECT_EQ(run({"predict", "--model", model_path, "--data", corpus_, "--t-last", "1e9"}).code, kExitConfig);

  const auto ins = run({"inspect", "--model", model_path});
  ASSERT_EQ(ins.code, kExitOk);
  EXPECT_EQ(ins.out.rfind("base rate b0 = ", 0), 0u);
  const auto ins_json = run({"inspect", "--model", model_path, "--json"});
  ASSERT_EQ(ins_json.code, kExitOk);
  const auto j = json::parse(ins_json.out);
  EXPECT_EQ(j["rules"].size(), model.rules.rules.size());
  for (const auto& rule : j["rules"]) {
    for (const auto& row : rule["static_similarity"]) {
      double sum = 0.0;
      for (const auto& v : row) sum += v.get<double>();
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST_F(CliTest, DeterministicTrainingIsByteIdentical) {
  ASSERT_EQ(train(path("a.json"), 1).code, kExitOk);
  ASSERT_EQ(train(path("b.json"), 1).code, kExitOk);
  ASSERT_EQ(train(path("c.json"), 4).code, kExitOk);
  const auto a = testutil::read_file(path("a.json"));
  EXPECT_EQ(a, testutil::read_file(path("b.json")));
  EXPECT_EQ(a, testutil::read_file(path("c.json")));
}

TEST(Cli, ExecutableRuns) {
  const std::string exe = TEMPOLOGIC_EXE;
  EXPECT_EQ(std::system((exe + " --help > /dev/null").c_str()), 0);
  EXPECT_NE(std::system((exe + " train > /dev/null 2>&1").c_str()), 0);
}

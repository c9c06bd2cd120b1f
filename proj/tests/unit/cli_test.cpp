#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli/app.hpp"
#include "mlstm/data.hpp"
#include "mlstm/lstm.hpp"
#include "test_util.hpp"

namespace mlstm {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::vector<std::vector<std::string>> read_rows(const fs::path& path) {
  std::istringstream in(testutil::slurp(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// Compares against tests/data/golden/<name>; MLSTM_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const fs::path& produced, const std::string& name) {
  const fs::path golden = testutil::data_path("golden") / name;
  if (std::getenv("MLSTM_UPDATE_GOLDEN")) {
    fs::create_directories(golden.parent_path());
    fs::copy_file(produced, golden, fs::copy_options::overwrite_existing);
  }
  ASSERT_TRUE(fs::exists(golden)) << golden;
  EXPECT_EQ(testutil::slurp(produced), testutil::slurp(golden)) << name;
}

TEST(Config, ParsesKeyValueLines) {
  std::istringstream in("# comment\n\n  epochs = 20  \nlr=0.5 # trailing\ninit-range = 0.1\n");
  const auto entries = cli::parse_config(in, "cfg");
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].key, "epochs");
  EXPECT_EQ(entries[0].value, "20");
  EXPECT_EQ(entries[0].line, 3u);
  EXPECT_EQ(entries[1].value, "0.5");
  EXPECT_EQ(entries[2].key, "init-range");
}

TEST(Config, RejectsMalformedLines) {
  for (const char* text : {"epochs\n", "= 3\n", "epochs =\n", "Epochs = 3\n", "epochs = 1\nepochs = 2\n", "--lr = 1\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(cli::parse_config(in, "cfg"), std::invalid_argument) << text;
  }
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, cli::kExitOk);
  const CliRun help = cli({"train", "--help"});
  EXPECT_EQ(help.code, cli::kExitOk);
  EXPECT_NE(help.out.find("--lr"), std::string::npos);
  EXPECT_EQ(cli({}).code, cli::kExitUsage);
  EXPECT_EQ(cli({"bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(cli({"train", "--not-an-option"}).code, cli::kExitUsage);
  EXPECT_EQ(cli({"train", "--mode", "median"}).code, cli::kExitUsage);
  EXPECT_EQ(cli({"train"}).code, cli::kExitUsage);  // --train missing
  EXPECT_EQ(cli({"preprocess", "--input", "x.csv", "--interval", "7"}).code, cli::kExitUsage);
}

TEST(Cli, MissingFileIsDataError) {
  const auto dir = testutil::temp_dir("cli_missing");
  const CliRun r = cli({"preprocess", "--input", (dir / "nope.csv").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, cli::kExitData);
}

TEST(Cli, MissingColumnNamed) {
  const auto dir = testutil::temp_dir("cli_column");
  std::ofstream(dir / "bad.csv") << "subject_id,visit_month,Ventricles\nS1,0,1\n";
  const CliRun r = cli({"preprocess", "--input", (dir / "bad.csv").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("label"), std::string::npos) << r.err;
}

TEST(Cli, GradcheckExitCodes) {
  const auto dir = testutil::temp_dir("cli_gradcheck");
  const CliRun ok = cli({"gradcheck", "--out-dir", dir.string()});
  EXPECT_EQ(ok.code, cli::kExitOk);
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "gradcheck.csv"));
  const CliRun bad = cli({"gradcheck", "--corrupt-vo"});
  EXPECT_EQ(bad.code, cli::kExitFailure);
  EXPECT_NE(bad.out.find("V_o"), std::string::npos);
}

TEST(Cli, ConfigUnknownKeyRejected) {
  const auto dir = testutil::temp_dir("cli_cfgkey");
  std::ofstream(dir / "run.cfg") << "learning-rate = 0.1\n";
  EXPECT_EQ(cli({"gradcheck", "--config", (dir / "run.cfg").string()}).code, cli::kExitUsage);
}

class Pipeline : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = testutil::temp_dir("cli_pipeline");
    const std::string d = dir.string();
    ASSERT_EQ(cli({"generate", "--subjects", "40", "--missing-rate", "0.2", "--seed", "5", "--out-dir", d}).code, 0);
    ASSERT_EQ(cli({"preprocess", "--input", d + "/cohort.csv", "--seed", "2", "--out-dir", d}).code, 0);
    ASSERT_EQ(cli({"train", "--train", d + "/train.csv", "--epochs", "40", "--seed", "3", "--out-dir", d + "/robust"}).code, 0);
    ASSERT_EQ(cli({"train", "--train", d + "/train.csv", "--epochs", "40", "--seed", "3", "--mode", "forward-impute",
                   "--out-dir", d + "/forward"}).code, 0);
  }

  static std::string p(const std::string& name) { return (dir / name).string(); }
};

fs::path Pipeline::dir;

TEST_F(Pipeline, GoldenOutputs) {
  expect_golden(dir / "cohort.csv", "cohort.csv");
  expect_golden(dir / "train.csv", "train.csv");
  expect_golden(dir / "test.csv", "test.csv");
  expect_golden(dir / "scaling.csv", "scaling.csv");
  expect_golden(dir / "preprocess_report.txt", "preprocess_report.txt");
}

TEST_F(Pipeline, PreprocessWritesElevenSlotGrid) {
  const LoadResult train = load_csv(dir / "train.csv");
  ASSERT_TRUE(train.errors.empty());
  EXPECT_EQ(train.table.records.size(), train.table.subject_count() * 11);
  const std::string report = testutil::slurp(dir / "preprocess_report.txt");
  EXPECT_NE(report.find("grid_slots=11\n"), std::string::npos);
}

TEST_F(Pipeline, TrainIsDeterministic) {
  const std::string out2 = p("robust_again");
  ASSERT_EQ(cli({"train", "--train", p("train.csv"), "--epochs", "40", "--seed", "3", "--out-dir", out2}).code, 0);
  EXPECT_EQ(testutil::slurp(dir / "robust/model.mlstm"), testutil::slurp(fs::path(out2) / "model.mlstm"));
  EXPECT_EQ(line_count(testutil::slurp(dir / "robust/history.csv")), 41u);
}

TEST_F(Pipeline, ConfigDefaultsAndFlagOverride) {
  std::ofstream(dir / "train.cfg") << "epochs = 5\nlr = 0.05\nseed = 3\n";
  const std::string a = p("cfg_a"), b = p("cfg_b"), c = p("cfg_c");
  ASSERT_EQ(cli({"train", "--config", p("train.cfg"), "--train", p("train.csv"), "--out-dir", a}).code, 0);
  ASSERT_EQ(cli({"train", "--train", p("train.csv"), "--epochs", "5", "--lr", "0.05", "--seed", "3", "--out-dir", b}).code, 0);
  EXPECT_EQ(testutil::slurp(fs::path(a) / "model.mlstm"), testutil::slurp(fs::path(b) / "model.mlstm"));
  ASSERT_EQ(cli({"train", "--config", p("train.cfg"), "--train", p("train.csv"), "--epochs", "7", "--out-dir", c}).code, 0);
  EXPECT_EQ(line_count(testutil::slurp(fs::path(c) / "history.csv")), 8u);
}

TEST_F(Pipeline, PredictMatchesLibraryForward) {
  const std::string out = p("pred");
  ASSERT_EQ(cli({"predict", "--model", p("robust/model.mlstm"), "--input", p("test.csv"), "--scaling", p("scaling.csv"),
                 "--out-dir", out}).code, 0);
  const LstmParams params = load_model(dir / "robust/model.mlstm");
  const ScalingSpec sc = load_scaling(dir / "scaling.csv");
  const MaskedBatch batch = tensorize(load_csv(dir / "test.csv").table, 10, 12);
  const Prediction y = predict(params, batch);
  const auto rows = read_rows(fs::path(out) / "predictions.csv");
  ASSERT_EQ(rows.size(), 1 + batch.J * batch.T * batch.M);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"subject_id", "slot", "visit_month", "biomarker", "predicted", "observed"}));
  std::size_t k = 1;
  for (std::size_t j = 0; j < y.J; ++j) {
    for (std::size_t t = 0; t < y.T; ++t) {
      for (std::size_t m = 0; m < y.M; ++m, ++k) {
        ASSERT_EQ(rows[k].size(), 6u);
        EXPECT_EQ(rows[k][0], batch.subject_ids[j]);
        EXPECT_EQ(rows[k][1], std::to_string(t + 1));
        EXPECT_EQ(rows[k][2], std::to_string(12 * (t + 1)));
        EXPECT_EQ(rows[k][4], format_double(sc.invert(m, y.at(j, t, m))));
        EXPECT_EQ(rows[k][5].empty(), batch.s_mask[batch.si(j, t, m)] == 0);
      }
    }
  }
}

TEST_F(Pipeline, ImputeModePredictNeedsTrain) {
  const CliRun r = cli({"predict", "--model", p("forward/model.mlstm"), "--input", p("test.csv"), "--scaling",
                     p("scaling.csv"), "--mode", "forward-impute", "--out-dir", p("pred_fwd")});
  EXPECT_EQ(r.code, cli::kExitUsage);
}

TEST_F(Pipeline, EvaluateReportsAndSelfComparison) {
  const std::string out = p("eval_self");
  ASSERT_EQ(cli({"evaluate", "--model", p("robust/model.mlstm"), "--train", p("train.csv"), "--test", p("test.csv"),
                 "--scaling", p("scaling.csv"), "--out-dir", out}).code, 0);
  const auto auc = read_rows(fs::path(out) / "auc.csv");
  ASSERT_EQ(auc.size(), 5u);
  EXPECT_EQ(auc[1][0], "CN-vs-MCI");
  EXPECT_EQ(auc[4][0], "CN-vs-MCI-vs-AD");
  EXPECT_EQ(read_rows(fs::path(out) / "mae.csv").size(), 7u);
  const std::string metrics = testutil::slurp(fs::path(out) / "metrics.txt");
  EXPECT_NE(metrics.find("mcnemar.p=1\n"), std::string::npos) << metrics;
  EXPECT_NE(metrics.find("wilcoxon.Ventricles.p=1\n"), std::string::npos) << metrics;
}

TEST_F(Pipeline, EvaluateComparesTwoModes) {
  const std::string out = p("eval_cmp");
  ASSERT_EQ(cli({"evaluate", "--model", p("robust/model.mlstm"), "--train", p("train.csv"), "--test", p("test.csv"),
                 "--scaling", p("scaling.csv"), "--compare-model", p("forward/model.mlstm"), "--compare-mode",
                 "forward-impute", "--out-dir", out}).code, 0);
  const std::string metrics = testutil::slurp(fs::path(out) / "metrics.txt");
  EXPECT_NE(metrics.find("compare_mode=forward-impute\n"), std::string::npos);
  EXPECT_NE(metrics.find("mae.normalized_average="), std::string::npos);
}

TEST_F(Pipeline, SweepWritesEveryCell) {
  const std::string out = p("sweep");
  ASSERT_EQ(cli({"sweep", "--train", p("train.csv"), "--test", p("test.csv"), "--scaling", p("scaling.csv"), "--epochs",
                 "5", "--rates", "0,0.2", "--out-dir", out}).code, 0);
  const auto rows = read_rows(fs::path(out) / "sweep.csv");
  ASSERT_EQ(rows.size(), 1u + 2 * 3);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"rate", "method", "norm_mae"}));
}

TEST_F(Pipeline, HalfYearlyGrid) {
  const std::string out = p("half");
  ASSERT_EQ(cli({"preprocess", "--input", p("cohort.csv"), "--interval", "6", "--out-dir", out}).code, 0);
  const LoadResult t = load_csv(fs::path(out) / "train.csv");
  EXPECT_EQ(t.table.records.size(), t.table.subject_count() * 21);
}

}  // namespace
}  // namespace mlstm

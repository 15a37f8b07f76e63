#include <gtest/gtest.h>

#include <sstream>

#include "protood/cli.hpp"
#include "protood/format.hpp"
#include "test_support.hpp"

namespace protood {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    const auto cfg = dir_->path() / "cfg.json";
    testing::write_text(cfg, R"({"num_classes": 4, "dims_per_layer": [12, 12, 12],
      "n_id_train": 120, "n_id_test": 100, "n_ood": 100, "kappa": 40, "seed": 9})");
    ASSERT_EQ(run({"synth", "--config", cfg.string(), "--out-dir", s("synth")}).code, 0);
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string s(const std::string& rel) { return (dir_->path() / rel).string(); }
  static std::string train() { return s("synth/train/manifest.json"); }
  static std::string test_id() { return s("synth/test_id/manifest.json"); }
  static std::string ood() { return s("synth/ood/manifest.json"); }

  static inline TempDir* dir_ = nullptr;
};

TEST_F(Cli, BuildReportsClassCounts) {
  TempDir out;
  const auto r = run({"build", "--manifest", train(), "--alpha", "0.1", "--out",
                      (out / "bank").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "class,count\n0,3\n1,3\n2,3\n3,3\n");
  EXPECT_TRUE(fs::exists(out / "bank" / "bank.json"));
  EXPECT_TRUE(fs::exists(out / "bank" / "P_layer1.npy"));
}

TEST_F(Cli, ScoreUniformMatchesCustomOnes) {
  TempDir out;
  const auto bank = (out / "bank").string();
  ASSERT_EQ(run({"build", "--manifest", train(), "--out", bank}).code, 0);
  const auto a = run({"score", "--bank", bank, "--manifest", test_id()});
  const auto b = run({"score", "--bank", bank, "--manifest", test_id(), "--scheme", "custom",
                      "--weights", "1,1,1"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.substr(0, a.out.find('\n')),
            "sample_index,affinity,ood_score,m_layer1,m_layer2,m_layer3,"
            "argmax_layer1,argmax_layer2,argmax_layer3");
  EXPECT_NE(a.err.find("note:"), std::string::npos);
  const auto self = run({"score", "--bank", bank, "--manifest", train()});
  EXPECT_EQ(self.err, "");
}

TEST_F(Cli, ScoreMissingLayerExitsThreeAndNamesIt) {
  TempDir out;
  Rng rng(1);
  std::vector<std::int64_t> labels{0, 1, 0, 1};
  const auto m = testing::write_dataset(out / "other", 4, 2,
                                        {{"layer1", 12, 0, 0, testing::uniform_floats(rng, 48, 0, 1)}},
                                        &labels);
  const auto bank = (out / "bank").string();
  ASSERT_EQ(run({"build", "--manifest", train(), "--out", bank}).code, 0);
  const auto r = run({"score", "--bank", bank, "--manifest", m.string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("layer2"), std::string::npos) << r.err;
}

TEST(CliGolden, ScoreCsvMatchesIndependentOracle) {
  TempDir out;
  const auto cfg = (testing::data_dir() / "golden_synth.json").string();
  ASSERT_EQ(run({"synth", "--config", cfg, "--out-dir", (out / "s").string()}).code, 0);
  ASSERT_EQ(run({"build", "--manifest", (out / "s/train/manifest.json").string(), "--alpha",
                 "1.0", "--out", (out / "bank").string()})
                .code,
            0);
  const auto r = run({"score", "--bank", (out / "bank").string(), "--manifest",
                      (out / "s/test_id/manifest.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, testing::slurp(testing::data_dir() / "golden_score.csv"));
}

class CliEval : public ::testing::Test {
 protected:
  std::string csv(const std::string& name, const std::vector<double>& affinity) {
    std::string text = "sample_index,affinity,ood_score\n";
    for (std::size_t i = 0; i < affinity.size(); ++i) {
      text += std::to_string(i) + "," + format_g9(affinity[i]) + "," +
              format_g9(1.0 - affinity[i]) + "\n";
    }
    const auto path = dir / (name + ".csv");
    testing::write_text(path, text);
    return path.string();
  }
  TempDir dir;
};

TEST_F(CliEval, PerfectAndIdenticalFixtures) {
  const auto id = csv("id", {0.9, 0.8, 0.85});
  const auto far = csv("far", {0.1, 0.2});
  const auto same = csv("same", {0.9, 0.8, 0.85});
  const auto r = run({"eval", "--id-scores", id, "--ood-scores", far, "--ood-scores", same});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out,
            "method,id_dataset,ood_dataset,auroc,fpr95,tau,n_id,n_ood\n"
            "protood,id,far,100.00,0.00,0.8,3,2\n"
            "protood,id,same,50.00,100.00,0.8,3,3\n");
  const auto oriented = run({"eval", "--id-scores", id, "--ood-scores", far, "--column",
                             "ood_score"});
  EXPECT_NE(oriented.out.find("protood,id,far,100.00,0.00,"), std::string::npos);
}

TEST_F(CliEval, AppendsToReport) {
  const auto id = csv("id", {0.9, 0.8});
  const auto ood = csv("ood", {0.1, 0.85});
  const auto report = (dir / "reports" / "report.csv").string();
  for (int i = 0; i < 2; ++i) {
    ASSERT_EQ(run({"eval", "--id-scores", id, "--ood-scores", ood, "--method-name", "m" +
                   std::to_string(i), "--id-name", "cifar10", "--ood-name", "svhn", "--out",
                   report})
                  .code,
              0);
  }
  EXPECT_EQ(testing::slurp(report),
            "method,id_dataset,ood_dataset,auroc,fpr95,tau,n_id,n_ood\n"
            "m0,cifar10,svhn,75.00,50.00,0.8,2,2\n"
            "m1,cifar10,svhn,75.00,50.00,0.8,2,2\n");
}

TEST_F(CliEval, Errors) {
  const auto id = csv("id", {0.9});
  const auto empty = csv("empty", {});
  EXPECT_EQ(run({"eval", "--id-scores", id, "--ood-scores", empty}).code, 4);
  EXPECT_EQ(run({"eval", "--id-scores", id, "--ood-scores", id, "--column", "nope"}).code, 2);
  EXPECT_EQ(run({"eval", "--id-scores", id}).code, 2);
  EXPECT_EQ(run({"eval", "--id-scores", (dir / "missing.csv").string(), "--ood-scores", id}).code,
            5);
}

TEST_F(Cli, AblationTables) {
  const auto alpha = run({"ablate-alpha", "--train-manifest", train(), "--test-manifest",
                          test_id(), "--ood-manifests", ood(), "--alphas", "0.1,1.0"});
  ASSERT_EQ(alpha.code, 0) << alpha.err;
  const auto lines = split(alpha.out, '\n');
  ASSERT_EQ(lines.size(), 4u);  // header, two rows, trailing empty
  EXPECT_EQ(lines[0], "alpha,auroc_mean,fpr_mean");
  EXPECT_EQ(lines[1].substr(0, 4), "0.1,");
  EXPECT_EQ(lines[2].substr(0, 2), "1,");

  TempDir out;
  const auto bank = (out / "bank").string();
  ASSERT_EQ(run({"build", "--manifest", train(), "--out", bank}).code, 0);
  const auto weights = run({"ablate-weights", "--bank", bank, "--test-manifest", test_id(),
                            "--ood-manifests", ood()});
  ASSERT_EQ(weights.code, 0) << weights.err;
  std::vector<std::string> names;
  for (const auto& line : split(weights.out, '\n')) names.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(names, (std::vector<std::string>{"scheme", "uniform", "shallow_heavy",
                                             "middle_heavy", "top_heavy", ""}));
  EXPECT_EQ(run({"ablate-weights", "--bank", bank, "--test-manifest", test_id(),
                 "--ood-manifests", ood(), "--schemes", "custom"})
                .code,
            2);

  const auto layers = run({"ablate-layers", "--train-manifest", train(), "--test-manifest",
                           test_id(), "--ood-manifests", ood()});
  ASSERT_EQ(layers.code, 0) << layers.err;
  const auto rows = split(layers.out, '\n');
  EXPECT_EQ(rows[0], "layers,auroc_mean,fpr_mean");
  EXPECT_EQ(rows[1].substr(0, 7), "layer3,");  // the feature layer feeding the classifier
  EXPECT_EQ(rows[2].substr(0, 21), "layer1+layer2+layer3,");
}

TEST_F(Cli, Baselines) {
  TempDir out;
  Rng rng(2);
  std::vector<std::int64_t> labels{0, 1, 2};
  const auto m = testing::write_dataset(out / "flat", 3, 3,
                                        {{"f", 4, 0, 0, testing::uniform_floats(rng, 12, 0, 1)}},
                                        &labels);
  // Constant logits.
  {
    auto j = nlohmann::json::parse(testing::slurp(m));
    j["logits_file"] = "logits.npy";
    testing::write_text(m, j.dump());
    save_tensor(Tensor(Shape{3, 3}, std::vector<float>(9, 2.0f)), m.parent_path() / "logits.npy");
  }
  const auto msp = run({"baseline", "--method", "msp", "--manifest", m.string()});
  ASSERT_EQ(msp.code, 0) << msp.err;
  EXPECT_EQ(msp.out, "sample_index,score\n0,0.333333333\n1,0.333333333\n2,0.333333333\n");

  const auto e1 = run({"baseline", "--method", "energy", "--manifest", test_id()});
  const auto e2 = run({"baseline", "--method", "energy", "--manifest", test_id(),
                       "--temperature", "1"});
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(run({"baseline", "--method", "energy", "--manifest", test_id(), "--temperature", "0"})
                .code,
            2);
  EXPECT_EQ(run({"baseline", "--method", "mahalanobis", "--manifest", test_id()}).code, 2);
  EXPECT_EQ(run({"baseline", "--method", "odin", "--manifest", test_id()}).code, 2);

  const auto id_csv = (out / "id.csv").string(), ood_csv = (out / "ood.csv").string();
  ASSERT_EQ(run({"baseline", "--method", "mahalanobis", "--manifest", test_id(),
                 "--train-manifest", train(), "--out", id_csv})
                .code,
            0);
  ASSERT_EQ(run({"baseline", "--method", "mahalanobis", "--manifest", ood(), "--train-manifest",
                 train(), "--out", ood_csv})
                .code,
            0);
  const auto report = run({"eval", "--id-scores", id_csv, "--ood-scores", ood_csv, "--column",
                           "score"});
  ASSERT_EQ(report.code, 0) << report.err;
  const auto row = split(split(report.out, '\n')[1], ',');
  EXPECT_GE(std::stod(row[3]), 95.0);
}

// Mean AUROC column (percent) of an ablation table, in row order.
std::vector<double> auroc_column(const std::string& table) {
  std::vector<double> out;
  const auto lines = split(table, '\n');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (!lines[i].empty()) out.push_back(std::stod(split(lines[i], ',')[1]));
  }
  return out;
}

TEST(CliSweeps, AlphaSweepIsNondecreasingAndUniformNearBest) {
  TempDir dir;
  testing::write_text(dir / "cfg.json", R"({"kappa": 5, "n_id_train": 1000, "n_id_test": 500,
    "n_ood": 500, "seed": 3})");
  ASSERT_EQ(run({"synth", "--config", (dir / "cfg.json").string(), "--out-dir",
                 (dir / "s").string()})
                .code,
            0);
  const auto m = [&](const char* split_name) {
    return (dir / "s" / split_name / "manifest.json").string();
  };
  const auto alpha = run({"ablate-alpha", "--train-manifest", m("train"), "--test-manifest",
                          m("test_id"), "--ood-manifests", m("ood"), "--alphas",
                          "0.05,0.10,0.25,1.0"});
  ASSERT_EQ(alpha.code, 0) << alpha.err;
  const auto a = auroc_column(alpha.out);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GE(a[i], a[i - 1] - 1.0) << alpha.out;

  const auto bank = (dir / "bank").string();
  ASSERT_EQ(run({"build", "--manifest", m("train"), "--out", bank}).code, 0);
  const auto weights = run({"ablate-weights", "--bank", bank, "--test-manifest", m("test_id"),
                            "--ood-manifests", m("ood")});
  ASSERT_EQ(weights.code, 0) << weights.err;
  const auto w = auroc_column(weights.out);
  EXPECT_GE(w[0], *std::max_element(w.begin(), w.end()) - 1.0) << weights.out;
}

TEST(CliMisc, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"build", "--out", "x"}).code, 2);
  EXPECT_EQ(run({"build", "--manifest", (dir / "nope.json").string(), "--out",
                 (dir / "b").string()})
                .code,
            5);
  testing::write_text(dir / "bad.json", "{not json");
  EXPECT_EQ(run({"build", "--manifest", (dir / "bad.json").string(), "--out",
                 (dir / "b").string()})
                .code,
            3);
  EXPECT_EQ(run({"synth", "--config", (dir / "bad.json").string(), "--out-dir",
                 (dir / "s").string()})
                .code,
            2);
  EXPECT_EQ(run({"score", "--bank", (dir / "nobank").string(), "--manifest",
                 (dir / "bad.json").string()})
                .code,
            5);
}

TEST(CliMisc, SynthDefaultsWithoutConfig) {
  TempDir dir;
  testing::write_text(dir / "cfg.json", R"({"n_id_train": 20, "n_id_test": 10, "n_ood": 10})");
  const auto r = run({"synth", "--config", (dir / "cfg.json").string(), "--out-dir",
                      (dir / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "train," + (dir / "s/train/manifest.json").string() + "\ntest_id," +
                       (dir / "s/test_id/manifest.json").string() + "\nood," +
                       (dir / "s/ood/manifest.json").string() + "\n");
  const auto j = nlohmann::json::parse(testing::slurp(dir / "s/train/manifest.json"));
  EXPECT_EQ(j["synth_config"]["num_classes"], 10);
}

}  // namespace
}  // namespace protood

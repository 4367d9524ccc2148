#include <filesystem>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "embshap/cli.hpp"

namespace embshap {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "embshap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), err);
  return {code, err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::path(EMBSHAP_TEST_TMP) / (std::string(info->test_suite_name()) + "." + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }

  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  /// Small regression dataset at <root>/<name>/dataset.json.
  std::string small_dataset(const std::string& name, std::vector<std::string> extra = {},
                            const std::string& dim = "6") {
    std::vector<std::string> args{"--seed", "3", "--out", dir(name), "generate", "--speakers", "30",
                                  "--per-speaker", "4", "--dim", dim, "--informative", "1,4"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run_cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir(name) + "/dataset.json";
  }

  fs::path root_;
};

std::string slurp(const fs::path& p) { return read_file(p); }

TEST_F(CliTest, GenerateDefaultShape) {
  const auto r = run_cli({"--seed", "1", "--out", dir("g"), "generate"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset d = load_dataset(dir("g") + "/dataset.json");
  EXPECT_EQ(d.size(), 3000);
  EXPECT_EQ(d.dim(), 64);
  EXPECT_EQ(d.speakers().size(), 300u);
  const json manifest = json::parse(slurp(dir("g") + "/manifest.json"));
  EXPECT_EQ(manifest["command"], "generate");
  EXPECT_EQ(manifest["seed"], 1);
}

TEST_F(CliTest, GenerateIsReproducible) {
  small_dataset("a");
  small_dataset("b");
  EXPECT_EQ(slurp(dir("a") + "/dataset.json"), slurp(dir("b") + "/dataset.json"));
  EXPECT_EQ(slurp(dir("a") + "/manifest.json"), slurp(dir("b") + "/manifest.json"));
}

TEST_F(CliTest, GenerateCsv) {
  const auto r = run_cli({"--format", "csv", "--out", dir("c"), "generate", "--speakers", "4",
                          "--per-speaker", "2", "--dim", "3", "--informative", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset d = load_dataset(dir("c") + "/dataset.csv");
  EXPECT_EQ(d.size(), 8);
}

TEST_F(CliTest, UsageAndIoFailures) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"generate", "--bogus"}).code, 1);
  EXPECT_EQ(run_cli({"generate"}).code, 1);  // no --out
  EXPECT_EQ(run_cli({"--out", dir("x"), "generate", "--task", "other"}).code, 1);
  EXPECT_EQ(run_cli({"--out", dir("x"), "generate", "--dim", "2", "--informative", "5"}).code, 2);

  // Output path below a regular file cannot be created.
  write_file(root_ / "blocker", "x");
  const auto r = run_cli({"--out", (root_ / "blocker" / "out").string(), "generate", "--speakers",
                          "4", "--dim", "3", "--informative", "0"});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(r.err.empty());

  EXPECT_EQ(run_cli({"--out", dir("t"), "train", "--data", dir("missing.json")}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliTest, TrainRidgeAndVoting) {
  const auto data = small_dataset("d");
  auto r = run_cli({"--out", dir("ridge"), "train", "--data", data, "--model", "ridge"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json model = json::parse(slurp(dir("ridge") + "/model.json"));
  EXPECT_EQ(model["architecture"], "linear");
  EXPECT_EQ(model["target_name"], "target");

  r = run_cli({"--out", dir("vr"), "train", "--data", data, "--model", "vr", "--members",
               "ridge,mlp", "--epochs", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto vr = model_from_json(json::parse(slurp(dir("vr") + "/model.json")));
  EXPECT_EQ(vr->dim(), 6);
}

TEST_F(CliTest, ClassifierNeedsBinaryTarget) {
  const auto data = small_dataset("d");
  const auto r = run_cli({"--out", dir("lda"), "train", "--data", data, "--model", "lda"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("classifier requires binary target"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir("lda")));
}

TEST_F(CliTest, EvaluateHoldoutAndKfold) {
  const auto reg = small_dataset("reg");
  auto r = run_cli({"--seed", "2", "--out", dir("h"), "evaluate", "--data", reg, "--holdout", "0.7",
                    "--epochs", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string table = slurp(dir("h") + "/report.txt");
  EXPECT_NE(table.find("ridge"), std::string::npos);
  EXPECT_NE(table.find("vr(ridge+mlp)"), std::string::npos);
  const json report = json::parse(slurp(dir("h") + "/report.json"));
  EXPECT_EQ(report["entries"].size(), 3u);

  const auto cls = small_dataset("cls", {"--task", "classification", "--margin", "4",
                                         "--target-name", "gender"});
  r = run_cli({"--out", dir("k"), "evaluate", "--data", cls, "--models", "lda", "--kfold", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json kreport = json::parse(slurp(dir("k") + "/report.json"));
  EXPECT_EQ(kreport["entries"][0]["folds"].size(), 4u);
  EXPECT_EQ(kreport["entries"][0]["metric"], "f1");

  EXPECT_NE(run_cli({"--out", dir("bad"), "evaluate", "--data", reg, "--kfold", "4"}).code, 0);
  EXPECT_EQ(run_cli({"--out", dir("bad"), "evaluate", "--data", reg}).code, 1);
  EXPECT_EQ(run_cli({"--out", dir("bad"), "evaluate", "--data", reg, "--kfold", "3", "--holdout",
                     "0.5"}).code, 1);
}

TEST_F(CliTest, ExplainAndReportPipeline) {
  const auto data = small_dataset("d");
  ASSERT_EQ(run_cli({"--out", dir("m"), "train", "--data", data}).code, 0);
  const auto model = dir("m") + "/model.json";

  auto r = run_cli({"--out", dir("lin"), "explain", "--data", data, "--model", model, "--method",
                    "linear", "--split", "all", "--rows", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json expl = json::parse(slurp(dir("lin") + "/explanations.json"));
  EXPECT_EQ(expl.size(), 120u);

  r = run_cli({"--out", dir("rep"), "report", "--explanations", dir("lin") + "/explanations.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string svg = slurp(dir("rep") + "/importance.svg");
  static const std::regex bar(R"re(class="bar" data-dim="\d+" data-value="([^"]+)")re");
  double total = 0;
  int bars = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), bar); it != std::sregex_iterator(); ++it) {
    total += std::stod((*it)[1]);
    ++bars;
  }
  EXPECT_EQ(bars, 6);
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_NE(svg.find("target (linear, linear)"), std::string::npos);
}

TEST_F(CliTest, KernelExplainIsReproducible) {
  const auto data = small_dataset("d");
  ASSERT_EQ(run_cli({"--out", dir("m"), "train", "--data", data}).code, 0);
  for (const char* out : {"k1", "k2"}) {
    const auto r = run_cli({"--seed", "9", "--out", dir(out), "explain", "--data", data, "--model",
                            dir("m") + "/model.json", "--coalitions", "20", "--rows", "10",
                            "--background-size", "10", "--threads", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir("k1") + "/explanations.json"), slurp(dir("k2") + "/explanations.json"));
}

TEST_F(CliTest, ExplainRejections) {
  const auto wide = small_dataset("w", {}, "20");
  ASSERT_EQ(run_cli({"--out", dir("m"), "train", "--data", wide}).code, 0);
  auto r = run_cli({"--out", dir("e"), "explain", "--data", wide, "--model",
                    dir("m") + "/model.json", "--method", "exact"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--method kernel"), std::string::npos) << r.err;

  const auto narrow = small_dataset("n");
  r = run_cli({"--out", dir("e"), "explain", "--data", narrow, "--model", dir("m") + "/model.json"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run_cli({"--out", dir("e"), "explain", "--data", narrow, "--model", narrow, "--method",
                     "wrong"}).code, 2);
}

TEST_F(CliTest, ReportEdgeCases) {
  write_file(root_ / "one.json",
             R"([{"method":"exact","phi0":0,"phi":[1,-1,2],"predicted":2,"n_coalitions_used":8,"seed":0}])");
  auto r = run_cli({"--out", dir("r1"), "report", "--explanations", (root_ / "one.json").string(),
                    "--title", "one"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json imp = json::parse(slurp(dir("r1") + "/importance.json"));
  EXPECT_EQ(imp["weights"], json::array({0.25, 0.25, 0.5}));

  write_file(root_ / "zero.json",
             R"([{"method":"exact","phi0":1,"phi":[0,0],"predicted":1,"n_coalitions_used":4,"seed":0}])");
  r = run_cli({"--out", dir("r0"), "report", "--explanations", (root_ / "zero.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir("r0")));

  write_file(root_ / "junk.json", "{not json");
  EXPECT_EQ(run_cli({"--out", dir("rj"), "report", "--explanations", (root_ / "junk.json").string()}).code, 2);
}

TEST(Sha256, KnownDigest) {
  EXPECT_EQ(cli::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace embshap

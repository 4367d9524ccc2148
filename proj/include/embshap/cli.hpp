#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "embshap/aggregate.hpp"
#include "embshap/data.hpp"
#include "embshap/error.hpp"
#include "embshap/metrics.hpp"
#include "embshap/models.hpp"
#include "embshap/report.hpp"
#include "embshap/shapley.hpp"

namespace embshap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

/// Everything a command writes, committed in one pass at the end.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  void add(std::string name, std::string content) {
    files_.emplace_back(std::move(name), std::move(content));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& [name, _] : files_) n.push_back(name);
    return n;
  }

  void commit() const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) {
      throw IoError("cannot create output directory '" + dir_.string() + "'");
    }
    for (const auto& [name, content] : files_) write_file(dir_ / name, content);
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

struct Manifest {
  std::string command;
  Seed seed = 0;
  json config = json::object();
  json inputs = json::array();

  void add_input(const fs::path& path, std::string_view bytes) {
    inputs.push_back({{"path", path.generic_string()}, {"sha256", sha256_hex(bytes)}});
  }

  std::string dump(const std::vector<std::string>& outputs) const {
    json j = {{"tool", "embshap"},    {"version", kToolVersion}, {"command", command},
              {"seed", seed},         {"config", config},        {"inputs", inputs},
              {"outputs", outputs}};
    return j.dump(2) + "\n";
  }
};

struct GlobalOptions {
  Seed seed = 0;
  std::string out;
  std::string format = "json";
};

struct ModelOptions {
  std::string model = "ridge";
  std::vector<std::string> members = {"ridge", "mlp"};
  double ridge_lambda = 1e-6;
  double lda_shrinkage = 1e-3;
  std::vector<int> hidden = {32, 16};
  int epochs = 200;
  double learning_rate = 1e-2;
  int batch_size = 32;
  double weight_decay = 1e-2;

  void attach(CLI::App& cmd, bool grid) {
    if (!grid) {
      cmd.add_option("--model", model, "ridge | mlp | vr | lda")->capture_default_str();
    }
    cmd.add_option("--members", members, "voting members (comma separated)")
        ->delimiter(',')
        ->capture_default_str();
    cmd.add_option("--lambda", ridge_lambda, "ridge penalty")->capture_default_str();
    cmd.add_option("--shrinkage", lda_shrinkage, "LDA covariance shrinkage")->capture_default_str();
    cmd.add_option("--hidden", hidden, "MLP hidden widths, e.g. 32,16")
        ->delimiter(',')
        ->expected(2)
        ->capture_default_str();
    cmd.add_option("--epochs", epochs, "MLP epochs")->capture_default_str();
    cmd.add_option("--lr", learning_rate, "MLP learning rate")->capture_default_str();
    cmd.add_option("--batch-size", batch_size, "MLP mini-batch size")->capture_default_str();
    cmd.add_option("--weight-decay", weight_decay, "MLP L2 penalty")->capture_default_str();
  }

  ModelSpec spec(const std::string& kind, Seed seed) const {
    ModelSpec s;
    s.kind = model_kind_from_string(kind);
    s.ridge_lambda = ridge_lambda;
    s.lda_shrinkage = lda_shrinkage;
    s.mlp.hidden1 = hidden.at(0);
    s.mlp.hidden2 = hidden.at(1);
    s.mlp.epochs = epochs;
    s.mlp.learning_rate = learning_rate;
    s.mlp.batch_size = batch_size;
    s.mlp.weight_decay = weight_decay;
    s.mlp.seed = seed;
    s.members.clear();
    for (const auto& m : members) s.members.push_back(model_kind_from_string(m));
    return s;
  }
};

inline fs::path require_out(const GlobalOptions& g) {
  if (g.out.empty()) throw UsageError("--out is required");
  return g.out;
}

struct LoadedData {
  Dataset data;
  std::string bytes;
};

inline LoadedData load_input(const fs::path& path) {
  std::string bytes = read_file(path);
  const auto format = data_format_from_path(path);
  if (format == DataFormat::csv) {
    return {parse_csv(bytes, path.stem().string()), std::move(bytes)};
  }
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("invalid JSON: ") + ex.what(), 0);
  }
  return {dataset_from_json(doc), std::move(bytes)};
}

/// Rows of `data` belonging to the requested side of the speaker split.
inline Dataset select_split(const Dataset& data, const std::string& split, double fraction,
                            Seed seed) {
  if (split == "all") return data;
  auto parts = split_by_speaker(data, fraction, seed);
  if (split == "train") return std::move(parts.train);
  if (split == "test") return std::move(parts.test);
  throw UsageError("--split must be train, test or all");
}

// ---------------------------------------------------------------------------

struct GenerateOptions {
  SyntheticSpec spec;
  std::string task = "regression";
};

inline void cmd_generate(const GlobalOptions& g, GenerateOptions opt) {
  const auto out_dir = require_out(g);
  const auto format = data_format_from_string(g.format);
  if (opt.task == "regression") {
    opt.spec.task = SyntheticTask::regression;
  } else if (opt.task == "classification") {
    opt.spec.task = SyntheticTask::classification;
  } else {
    throw UsageError("--task must be regression or classification");
  }
  opt.spec.seed = g.seed;
  const Dataset data = generate_synthetic(opt.spec);

  OutputSet out(out_dir);
  const std::string name = "dataset." + to_string(format);
  out.add(name, format == DataFormat::csv ? to_csv(data) : to_json(data).dump(1) + "\n");

  Manifest m;
  m.command = "generate";
  m.seed = g.seed;
  m.config = {{"speakers", opt.spec.n_speakers},
              {"per_speaker", opt.spec.utterances_per_speaker},
              {"dim", opt.spec.dim},
              {"informative", opt.spec.informative_dims},
              {"task", opt.task},
              {"noise", opt.spec.noise_std},
              {"margin", opt.spec.class_margin},
              {"target_name", opt.spec.target_name},
              {"format", to_string(format)}};
  out.add("manifest.json", m.dump(out.names()));
  out.commit();
}

struct TrainOptions {
  std::string data;
  ModelOptions model;
  std::string split = "train";
  double train_fraction = 0.7;
};

inline void cmd_train(const GlobalOptions& g, const TrainOptions& opt) {
  const auto out_dir = require_out(g);
  const auto input = load_input(opt.data);
  const Dataset train = select_split(input.data, opt.split, opt.train_fraction, g.seed);
  const ModelSpec spec = opt.model.spec(opt.model.model, g.seed);
  const auto model = fit_model(spec, train);

  OutputSet out(out_dir);
  json doc = model_to_json(*model);
  doc["target_name"] = train.target_name();
  doc["target_kind"] = to_string(train.target_kind());
  out.add("model.json", doc.dump(1) + "\n");

  Manifest m;
  m.command = "train";
  m.seed = g.seed;
  m.add_input(opt.data, input.bytes);
  m.config = {{"model", spec.to_json()},
              {"split", opt.split},
              {"train_fraction", opt.train_fraction},
              {"train_rows", train.size()}};
  out.add("manifest.json", m.dump(out.names()));
  out.commit();
}

struct EvaluateOptions {
  std::vector<std::string> data;
  std::vector<std::string> models = {"ridge", "mlp", "vr"};
  ModelOptions model;
  std::optional<double> holdout;
  std::optional<int> kfold;
};

inline void cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& opt) {
  const auto out_dir = require_out(g);
  if (opt.holdout.has_value() == opt.kfold.has_value()) {
    throw UsageError("choose exactly one of --holdout or --kfold");
  }
  Manifest m;
  m.command = "evaluate";
  m.seed = g.seed;

  EvalReport report;
  report.seed = g.seed;
  report.protocol = opt.kfold ? "kfold-" + std::to_string(*opt.kfold)
                              : "holdout-" + detail::format_shortest(*opt.holdout);
  json specs = json::array();
  for (const auto& path : opt.data) {
    const auto input = load_input(path);
    m.add_input(path, input.bytes);
    std::optional<FoldAssignment> folds;
    if (opt.kfold) {
      if (input.data.target_kind() != TargetKind::binary) {
        throw ValidationError("--kfold uses label-stratified folds and requires a binary target ('" +
                              path + "' is continuous)");
      }
      folds = stratified_speaker_kfold(input.data, *opt.kfold, g.seed);
    }
    for (const auto& name : opt.models) {
      const ModelSpec spec = opt.model.spec(name, g.seed);
      if (specs.size() < opt.models.size()) specs.push_back(spec.to_json());
      if (folds) {
        report.append(cross_validate(input.data, spec, *folds));
      } else {
        report.append(holdout_evaluate(input.data, spec, *opt.holdout, g.seed));
      }
    }
  }

  OutputSet out(out_dir);
  out.add("report.json", to_json(report).dump(2) + "\n");
  out.add("report.txt", format_table(report));
  m.config = {{"models", specs}, {"protocol", report.protocol}};
  out.add("manifest.json", m.dump(out.names()));
  out.commit();
}

struct ExplainOptions {
  std::string data;
  std::string model;
  std::string method = "kernel";
  std::size_t coalitions = 2048;
  Eigen::Index background_size = 100;
  std::string split = "train";
  double train_fraction = 0.7;
  Eigen::Index rows = 3000;
  int max_exact_dim = 16;
  unsigned threads = 1;
};

inline void cmd_explain(const GlobalOptions& g, const ExplainOptions& opt) {
  const auto out_dir = require_out(g);
  const auto input = load_input(opt.data);
  const std::string model_bytes = read_file(opt.model);
  json model_doc;
  try {
    model_doc = json::parse(model_bytes);
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("invalid model JSON: ") + ex.what(), 0);
  }
  const auto model = model_from_json(model_doc);
  if (model->dim() != input.data.dim()) {
    throw ValidationError("model expects D=" + std::to_string(model->dim()) + " but data has D=" +
                          std::to_string(input.data.dim()));
  }
  const auto method = explain_method_from_string(opt.method);
  if (method == ExplainMethod::exact && model->dim() > opt.max_exact_dim) {
    throw ValidationError("exact method over D=" + std::to_string(model->dim()) +
                          " exceeds --max-exact-dim " + std::to_string(opt.max_exact_dim) +
                          "; use --method kernel");
  }

  const Dataset explained = select_split(input.data, opt.split, opt.train_fraction, g.seed);
  const Dataset reference =
      opt.split == "all" ? input.data
                         : select_split(input.data, "train", opt.train_fraction, g.seed);
  BackgroundSet background = sample_background(reference, opt.background_size, g.seed);

  std::vector<Eigen::Index> rows(static_cast<std::size_t>(explained.size()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  if (opt.rows > 0 && opt.rows < explained.size()) {
    std::mt19937_64 rng(derive_row_seed(g.seed, 0xB0B));
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(opt.rows));
    std::sort(rows.begin(), rows.end());
  }
  Matrix inputs(static_cast<Eigen::Index>(rows.size()), explained.dim());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    inputs.row(static_cast<Eigen::Index>(k)) = explained.embeddings().row(rows[k]);
  }

  ShapleyConfig config(std::move(background), method);
  config.n_coalitions = opt.coalitions;
  config.seed = g.seed;
  config.max_exact_dim = opt.max_exact_dim;
  config.threads = opt.threads;
  const auto explanations = explain_batch(*model, inputs, config);

  json arr = json::array();
  for (const auto& e : explanations) arr.push_back(to_json(e));
  OutputSet out(out_dir);
  out.add("explanations.json", arr.dump(1) + "\n");

  Manifest m;
  m.command = "explain";
  m.seed = g.seed;
  m.add_input(opt.data, input.bytes);
  m.add_input(opt.model, model_bytes);
  m.config = {{"method", opt.method},
              {"coalitions", opt.coalitions},
              {"background_size", config.background.size()},
              {"split", opt.split},
              {"train_fraction", opt.train_fraction},
              {"rows", rows.size()},
              {"max_exact_dim", opt.max_exact_dim},
              {"model_architecture", model->architecture()},
              {"target_name", model_doc.value("target_name", explained.target_name())}};
  out.add("manifest.json", m.dump(out.names()));
  out.commit();
}

struct ReportOptions {
  std::string explanations;
  std::string title;
};

inline void cmd_report(const GlobalOptions& g, const ReportOptions& opt) {
  const auto out_dir = require_out(g);
  const std::string bytes = read_file(opt.explanations);
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("invalid explanations JSON: ") + ex.what(), 0);
  }
  if (!doc.is_array()) throw ValidationError("explanations file must hold a JSON array");
  std::vector<LocalExplanation> explanations;
  for (const auto& j : doc) explanations.push_back(explanation_from_json(j));
  const GlobalImportance importance = global_importance(explanations);

  std::string title = opt.title;
  if (title.empty()) {
    title = "Global importance";
    const fs::path manifest_path = fs::path(opt.explanations).parent_path() / "manifest.json";
    std::error_code ec;
    if (fs::exists(manifest_path, ec)) {
      try {
        const json mj = json::parse(read_file(manifest_path));
        const auto& c = mj.at("config");
        title += ": " + c.value("target_name", std::string("target")) + " (" +
                 c.value("model_architecture", std::string("model")) + ", " +
                 c.value("method", std::string("?")) + ")";
      } catch (const std::exception&) {
        // Title falls back to the generic one.
      }
    }
  }

  OutputSet out(out_dir);
  out.add("importance.json", to_json(importance).dump(2) + "\n");
  out.add("importance.svg", render_importance_svg(importance, title));
  Manifest m;
  m.command = "report";
  m.seed = g.seed;
  m.add_input(opt.explanations, bytes);
  m.config = {{"title", title}, {"n_explanations", importance.n_explanations}};
  out.add("manifest.json", m.dump(out.names()));
  out.commit();
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand. Returns the process exit status:
/// 0 success, 1 usage, 2 data/validation/IO, 3 numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Shapley attribution toolkit for speaker-embedding predictors", "embshap"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--out", g.out, "output directory");
  app.add_option("--format", g.format, "dataset output format: json | csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  app.fallthrough();

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "synthesize an embedding dataset");
  generate->add_option("--speakers", gen.spec.n_speakers)->capture_default_str();
  generate->add_option("--per-speaker", gen.spec.utterances_per_speaker)->capture_default_str();
  generate->add_option("--dim", gen.spec.dim)->capture_default_str();
  generate->add_option("--informative", gen.spec.informative_dims)
      ->delimiter(',')
      ->capture_default_str();
  generate->add_option("--task", gen.task, "regression | classification")->capture_default_str();
  generate->add_option("--noise", gen.spec.noise_std)->capture_default_str();
  generate->add_option("--margin", gen.spec.class_margin, "classification class gap")
      ->capture_default_str();
  generate->add_option("--target-name", gen.spec.target_name)->capture_default_str();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "fit one model");
  train_cmd->add_option("--data", train.data)->required();
  train.model.attach(*train_cmd, false);
  train_cmd->add_option("--split", train.split, "train | test | all")->capture_default_str();
  train_cmd->add_option("--train-fraction", train.train_fraction)->capture_default_str();

  EvaluateOptions eval;
  auto* evaluate = app.add_subcommand("evaluate", "score a model grid");
  evaluate->add_option("--data", eval.data, "one or more dataset files")->required();
  evaluate->add_option("--models", eval.models, "model grid")->delimiter(',')->capture_default_str();
  eval.model.attach(*evaluate, true);
  double holdout = 0.0;
  int kfold = 0;
  auto* holdout_opt = evaluate->add_option("--holdout", holdout, "speaker-disjoint train fraction");
  auto* kfold_opt = evaluate->add_option("--kfold", kfold, "stratified speaker k-fold");
  holdout_opt->excludes(kfold_opt);

  ExplainOptions expl;
  auto* explain_cmd = app.add_subcommand("explain", "attribute predictions to dimensions");
  explain_cmd->add_option("--data", expl.data)->required();
  explain_cmd->add_option("--model", expl.model)->required();
  explain_cmd->add_option("--method", expl.method, "exact | kernel | linear")->capture_default_str();
  explain_cmd->add_option("--coalitions", expl.coalitions)->capture_default_str();
  explain_cmd->add_option("--background-size", expl.background_size)->capture_default_str();
  explain_cmd->add_option("--split", expl.split, "train | test | all")->capture_default_str();
  explain_cmd->add_option("--train-fraction", expl.train_fraction)->capture_default_str();
  explain_cmd->add_option("--rows", expl.rows, "rows to explain (0 = all)")->capture_default_str();
  explain_cmd->add_option("--max-exact-dim", expl.max_exact_dim)->capture_default_str();
  explain_cmd->add_option("--threads", expl.threads)->capture_default_str();

  ReportOptions rep;
  auto* report_cmd = app.add_subcommand("report", "aggregate explanations into a profile");
  report_cmd->add_option("--explanations", rep.explanations)->required();
  report_cmd->add_option("--title", rep.title);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    err << app.help();
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return 1;
  }

  try {
    if (*generate) {
      cmd_generate(g, gen);
    } else if (*train_cmd) {
      cmd_train(g, train);
    } else if (*evaluate) {
      if (*holdout_opt) eval.holdout = holdout;
      if (*kfold_opt) eval.kfold = kfold;
      cmd_evaluate(g, eval);
    } else if (*explain_cmd) {
      cmd_explain(g, expl);
    } else if (*report_cmd) {
      cmd_report(g, rep);
    }
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return ex.exit_code();
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace embshap::cli

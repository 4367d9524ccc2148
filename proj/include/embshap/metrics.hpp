#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "embshap/data.hpp"
#include "embshap/detail/text.hpp"
#include "embshap/error.hpp"
#include "embshap/models.hpp"

namespace embshap {

/// Coefficient of determination: 1 - mean((y - yhat)^2) / mean((y - mean(y))^2).
inline double r_squared(const Vector& y, const Vector& y_hat) {
  if (y.size() != y_hat.size()) throw ValidationError("r_squared: length mismatch");
  if (y.size() < 2) throw ValidationError("r_squared needs at least two values");
  const double mean = y.mean();
  const double total = (y.array() - mean).square().mean();
  if (total == 0.0) throw ValidationError("r_squared undefined for constant y");
  const double resid = (y - y_hat).array().square().mean();
  return 1.0 - resid / total;
}

/// F1 of `positive_class`; 0 when precision + recall is 0.
inline double f1_score(const std::vector<int>& labels, const std::vector<int>& predictions,
                       int positive_class = 1) {
  if (labels.size() != predictions.size()) throw ValidationError("f1_score: length mismatch");
  if (labels.empty()) throw ValidationError("f1_score needs at least one label");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool truth = labels[i] == positive_class;
    const bool pred = predictions[i] == positive_class;
    tp += truth && pred;
    fp += !truth && pred;
    fn += truth && !pred;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of_speaker;

  std::set<std::string> speakers_in(int fold) const {
    std::set<std::string> out;
    for (const auto& [id, f] : fold_of_speaker) {
      if (f == fold) out.insert(id);
    }
    return out;
  }
};

/// One label per speaker; throws if a speaker's utterances disagree.
inline std::map<std::string, int> speaker_labels(const Dataset& data) {
  if (data.target_kind() != TargetKind::binary) {
    throw ValidationError("speaker labels require a binary target");
  }
  std::map<std::string, int> labels;
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    const auto& id = data.speaker_ids()[static_cast<std::size_t>(r)];
    const int label = data.targets()[r] > 0.5 ? 1 : 0;
    auto [it, inserted] = labels.emplace(id, label);
    if (!inserted && it->second != label) {
      throw ValidationError("speaker '" + id + "' carries inconsistent labels");
    }
  }
  return labels;
}

/// Speaker-level folds with each class dealt round-robin, so per-fold class
/// counts differ by at most one.
inline FoldAssignment stratified_speaker_kfold(const Dataset& data, int k, Seed seed) {
  if (k < 2) throw ValidationError("k-fold needs k >= 2");
  const auto labels = speaker_labels(data);
  std::vector<std::string> pos, neg;
  for (const auto& [id, label] : labels) (label ? pos : neg).push_back(id);
  if (static_cast<int>(pos.size()) < k || static_cast<int>(neg.size()) < k) {
    throw ValidationError("each class needs at least k=" + std::to_string(k) +
                          " speakers (positive: " + std::to_string(pos.size()) +
                          ", negative: " + std::to_string(neg.size()) + ")");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  FoldAssignment folds;
  folds.k = k;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    folds.fold_of_speaker[pos[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  // Negatives continue where positives stopped so total fold sizes stay even.
  const std::size_t offset = pos.size() % static_cast<std::size_t>(k);
  for (std::size_t i = 0; i < neg.size(); ++i) {
    folds.fold_of_speaker[neg[i]] =
        static_cast<int>((i + offset) % static_cast<std::size_t>(k));
  }
  return folds;
}

/// Training rows are the speakers outside `fold`, test rows those inside.
inline SpeakerSplit fold_split(const Dataset& data, const FoldAssignment& folds, int fold) {
  std::set<std::string> train, test;
  for (const auto& id : data.speakers()) {
    const auto it = folds.fold_of_speaker.find(id);
    if (it == folds.fold_of_speaker.end()) {
      throw ValidationError("speaker '" + id + "' has no fold");
    }
    (it->second == fold ? test : train).insert(id);
  }
  if (train.empty() || test.empty()) {
    throw ValidationError("fold " + std::to_string(fold) + " leaves an empty side");
  }
  return {data.with_speakers(train), data.with_speakers(test)};
}

// ---------------------------------------------------------------------------

struct EvalEntry {
  std::string model;
  std::string target;
  std::string metric;  // "r2" or "f1"
  std::vector<double> folds;
  double mean = 0.0;
};

struct EvalReport {
  std::string protocol;
  Seed seed = 0;
  std::vector<EvalEntry> entries;

  void append(const EvalReport& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
  }
};

/// R^2 on continuous targets; F1 of class 1 (decision score > 0) on binary.
inline double score_model(const PredictiveModel& model, const Dataset& test) {
  const Vector pred = model.predict(test.embeddings());
  if (test.target_kind() == TargetKind::continuous) return r_squared(test.targets(), pred);
  std::vector<int> labels, predicted;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    labels.push_back(test.targets()[i] > 0.5);
    predicted.push_back(pred[i] > 0.0);
  }
  return f1_score(labels, predicted, 1);
}

inline std::string metric_name(const Dataset& data) {
  return data.target_kind() == TargetKind::continuous ? "r2" : "f1";
}

inline double arithmetic_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline EvalReport cross_validate(const Dataset& data, const ModelSpec& spec,
                                 const FoldAssignment& folds) {
  EvalEntry entry{spec.label(), data.target_name(), metric_name(data), {}, 0.0};
  for (int f = 0; f < folds.k; ++f) {
    try {
      const auto split = fold_split(data, folds, f);
      const auto model = fit_model(spec, split.train);
      entry.folds.push_back(score_model(*model, split.test));
    } catch (const NumericalError& ex) {
      throw NumericalError("fold " + std::to_string(f) + ": " + ex.what());
    } catch (const Error& ex) {
      throw ValidationError("fold " + std::to_string(f) + ": " + ex.what());
    }
  }
  entry.mean = arithmetic_mean(entry.folds);
  EvalReport report;
  report.protocol = "kfold-" + std::to_string(folds.k);
  report.entries.push_back(std::move(entry));
  return report;
}

/// Speaker-disjoint holdout: one "fold" holding the test score.
inline EvalReport holdout_evaluate(const Dataset& data, const ModelSpec& spec,
                                   double train_fraction, Seed seed) {
  const auto split = split_by_speaker(data, train_fraction, seed);
  const auto model = fit_model(spec, split.train);
  const double score = score_model(*model, split.test);
  EvalReport report;
  report.protocol = "holdout-" + detail::format_shortest(train_fraction);
  report.seed = seed;
  report.entries.push_back({spec.label(), data.target_name(), metric_name(data), {score}, score});
  return report;
}

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"model", e.model},
                       {"target", e.target},
                       {"metric", e.metric},
                       {"folds", e.folds},
                       {"mean", e.mean}});
  }
  return {{"protocol", report.protocol}, {"seed", report.seed}, {"entries", std::move(entries)}};
}

/// Models as rows, targets as columns; cells hold the mean score.
inline std::string format_table(const EvalReport& report) {
  std::vector<std::string> models, targets;
  std::map<std::pair<std::string, std::string>, const EvalEntry*> cells;
  for (const auto& e : report.entries) {
    if (std::find(models.begin(), models.end(), e.model) == models.end()) models.push_back(e.model);
    const std::string col = e.target + " (" + (e.metric == "r2" ? "R2" : "F1") + ")";
    if (std::find(targets.begin(), targets.end(), col) == targets.end()) targets.push_back(col);
    cells[{e.model, col}] = &e;
  }
  std::size_t first = 5;
  for (const auto& m : models) first = std::max(first, m.size());
  std::vector<std::size_t> widths;
  for (const auto& t : targets) widths.push_back(std::max<std::size_t>(t.size(), 7));

  auto pad = [](const std::string& s, std::size_t w, bool right) {
    const std::string fill(w > s.size() ? w - s.size() : 0, ' ');
    return right ? fill + s : s + fill;
  };
  std::ostringstream out;
  out << "protocol: " << report.protocol << "\n";
  out << pad("Model", first, false);
  for (std::size_t c = 0; c < targets.size(); ++c) out << " | " << pad(targets[c], widths[c], true);
  out << "\n" << std::string(first, '-');
  for (auto w : widths) out << "-+-" << std::string(w, '-');
  out << "\n";
  for (const auto& m : models) {
    out << pad(m, first, false);
    for (std::size_t c = 0; c < targets.size(); ++c) {
      const auto it = cells.find({m, targets[c]});
      const std::string v = it == cells.end() ? "-" : detail::format_fixed(it->second->mean, 3);
      out << " | " << pad(v, widths[c], true);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace embshap

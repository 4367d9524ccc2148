#pragma once

#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "embshap/error.hpp"
#include "embshap/shapley.hpp"

namespace embshap {

/// Mean |phi| per dimension, normalized to sum 1.
struct GlobalImportance {
  Vector weights;
  std::size_t n_explanations = 0;
  ExplainMethod method = ExplainMethod::exact;
};

inline GlobalImportance global_importance(std::span<const LocalExplanation> explanations) {
  if (explanations.empty()) throw ValidationError("no explanations to aggregate");
  const auto d = explanations.front().phi.size();
  const auto method = explanations.front().method;
  Vector mean_abs = Vector::Zero(d);
  for (std::size_t n = 0; n < explanations.size(); ++n) {
    const auto& e = explanations[n];
    if (e.phi.size() != d) {
      throw ValidationError("explanation " + std::to_string(n) + " has D=" +
                            std::to_string(e.phi.size()) + ", expected " + std::to_string(d));
    }
    if (e.method != method) {
      throw ValidationError("explanation " + std::to_string(n) + " mixes methods");
    }
    if (!e.phi.allFinite()) {
      throw ValidationError("explanation " + std::to_string(n) + " has non-finite attributions");
    }
    mean_abs += e.phi.cwiseAbs();
  }
  mean_abs /= static_cast<double>(explanations.size());
  const double total = mean_abs.sum();
  if (!(total > 0.0)) {
    throw ValidationError("all attributions are zero; importance profile is undefined");
  }
  return {mean_abs / total, explanations.size(), method};
}

/// Total weight on a set of dimensions (repeated indices count once).
inline double mass_on(const GlobalImportance& importance, std::span<const int> dims) {
  const std::set<int> unique(dims.begin(), dims.end());
  double mass = 0.0;
  for (int i : unique) {
    if (i < 0 || i >= importance.weights.size()) {
      throw ValidationError("dimension " + std::to_string(i) + " out of range");
    }
    mass += importance.weights[i];
  }
  return mass;
}

inline nlohmann::json to_json(const GlobalImportance& g) {
  return {{"method", to_string(g.method)},
          {"n_explanations", g.n_explanations},
          {"weights", std::vector<double>(g.weights.begin(), g.weights.end())}};
}

}  // namespace embshap

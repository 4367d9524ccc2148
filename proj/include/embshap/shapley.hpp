#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "embshap/data.hpp"
#include "embshap/error.hpp"
#include "embshap/models.hpp"
#include "embshap/types.hpp"

namespace embshap {

/// The set of features treated as present. Stored as 64-bit words, so any D
/// is representable; D <= 64 fits in one word.
class Coalition {
 public:
  explicit Coalition(std::size_t dim) : dim_(dim), words_((dim + 63) / 64, 0) {}

  static Coalition from_mask(std::uint64_t mask, std::size_t dim) {
    if (dim < 64 && (mask >> dim) != 0) throw ValidationError("mask has bits beyond D");
    Coalition c(dim);
    if (!c.words_.empty()) c.words_[0] = mask;
    return c;
  }

  static Coalition full(std::size_t dim) {
    Coalition c(dim);
    for (std::size_t i = 0; i < dim; ++i) c.insert(i);
    return c;
  }

  std::size_t dim() const { return dim_; }

  bool contains(std::size_t i) const {
    return i < dim_ && ((words_[i / 64] >> (i % 64)) & 1U) != 0;
  }

  void insert(std::size_t i) {
    check(i);
    words_[i / 64] |= std::uint64_t{1} << (i % 64);
  }

  void erase(std::size_t i) {
    check(i);
    words_[i / 64] &= ~(std::uint64_t{1} << (i % 64));
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  Coalition complement() const {
    Coalition c(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      if (!contains(i)) c.insert(i);
    }
    return c;
  }

  std::vector<std::size_t> members() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dim_; ++i) {
      if (contains(i)) out.push_back(i);
    }
    return out;
  }

  auto operator<=>(const Coalition&) const = default;

 private:
  void check(std::size_t i) const {
    if (i >= dim_) {
      throw ValidationError("feature index " + std::to_string(i) + " outside D=" +
                            std::to_string(dim_));
    }
  }

  std::size_t dim_;
  std::vector<std::uint64_t> words_;
};

enum class ExplainMethod { exact, kernel, linear };

inline std::string to_string(ExplainMethod m) {
  switch (m) {
    case ExplainMethod::exact: return "exact";
    case ExplainMethod::kernel: return "kernel";
    case ExplainMethod::linear: return "linear";
  }
  return "?";
}

inline ExplainMethod explain_method_from_string(std::string_view s) {
  if (s == "exact") return ExplainMethod::exact;
  if (s == "kernel") return ExplainMethod::kernel;
  if (s == "linear") return ExplainMethod::linear;
  throw UsageError("unknown method '" + std::string(s) + "' (expected exact, kernel, linear)");
}

/// Additive explanation of one prediction: predicted ~= phi0 + sum(phi).
struct LocalExplanation {
  double phi0 = 0.0;
  Vector phi;
  double predicted = 0.0;
  ExplainMethod method = ExplainMethod::exact;
  std::size_t n_coalitions_used = 0;
  Seed seed = 0;

  double efficiency_gap() const { return phi0 + phi.sum() - predicted; }
};

inline nlohmann::json to_json(const LocalExplanation& e) {
  return {{"method", to_string(e.method)},
          {"phi0", e.phi0},
          {"phi", std::vector<double>(e.phi.begin(), e.phi.end())},
          {"predicted", e.predicted},
          {"n_coalitions_used", e.n_coalitions_used},
          {"seed", e.seed}};
}

inline LocalExplanation explanation_from_json(const nlohmann::json& j) {
  try {
    LocalExplanation e;
    e.method = explain_method_from_string(j.at("method").get<std::string>());
    e.phi0 = j.at("phi0").get<double>();
    const auto phi = j.at("phi").get<std::vector<double>>();
    e.phi = Eigen::Map<const Vector>(phi.data(), static_cast<Eigen::Index>(phi.size()));
    e.predicted = j.at("predicted").get<double>();
    e.n_coalitions_used = j.at("n_coalitions_used").get<std::size_t>();
    e.seed = j.at("seed").get<Seed>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed explanation: ") + ex.what(), 0);
  }
}

struct ShapleyConfig {
  explicit ShapleyConfig(BackgroundSet bg, ExplainMethod m = ExplainMethod::exact)
      : background(std::move(bg)), method(m) {}

  BackgroundSet background;
  ExplainMethod method;
  /// Kernel only: number of proper (non-empty, non-full) coalitions to
  /// evaluate. Values >= 2^D - 2 enumerate every coalition.
  std::size_t n_coalitions = 2048;
  Seed seed = 0;
  int max_exact_dim = 16;
  /// Worker threads for explain_batch.
  unsigned threads = 1;
};

// ---------------------------------------------------------------------------
// Value function

/// v(S): the model's mean output when features in S take x's values and the
/// rest are filled from each background row in turn.
class MarginalGame {
 public:
  MarginalGame(const PredictiveModel& model, const RowVector& x, const BackgroundSet& background)
      : model_(model), x_(x), background_(background) {
    if (x_.size() != model_.dim()) {
      throw ValidationError("input width " + std::to_string(x_.size()) +
                            " does not match model dimension " + std::to_string(model_.dim()));
    }
    if (background_.dim() != model_.dim()) {
      throw ValidationError("background width " + std::to_string(background_.dim()) +
                            " does not match model dimension " + std::to_string(model_.dim()));
    }
    if (!x_.allFinite()) throw ValidationError("input to explain has non-finite entries");
    full_value_ = model_.predict_one(x_);
    // Affine models: the background average commutes with f, so
    // v(S) = f(mean) + sum_{i in S} w_i (x_i - mean_i).
    if (const auto affine = model_.affine_form()) {
      const RowVector mean = background_.mean();
      affine_base_ = model_.predict_one(mean);
      affine_gain_ = affine->weights.array() * (x_ - mean).transpose().array();
      affine_ = true;
    }
  }

  std::size_t dim() const { return static_cast<std::size_t>(x_.size()); }
  double full_value() const { return full_value_; }

  double value(const Coalition& s) const {
    std::vector<double> out(1);
    values(std::span<const Coalition>(&s, 1), out);
    return out[0];
  }

  /// Evaluates every coalition in `coalitions`, batching hybrid rows so each
  /// predict call sees at most ~kChunkRows rows.
  void values(std::span<const Coalition> coalitions, std::span<double> out) const {
    const Eigen::Index m = background_.size();
    const std::size_t per_chunk =
        std::max<std::size_t>(1, kChunkRows / static_cast<std::size_t>(m));
    std::vector<std::size_t> pending;
    for (std::size_t c = 0; c < coalitions.size(); ++c) {
      if (coalitions[c].dim() != dim()) throw ValidationError("coalition dimension mismatch");
      if (coalitions[c].size() == dim()) {
        out[c] = full_value_;
      } else if (affine_) {
        double v = affine_base_;
        for (auto i : coalitions[c].members()) v += affine_gain_[static_cast<Eigen::Index>(i)];
        out[c] = v;
      } else {
        pending.push_back(c);
      }
    }
    Matrix batch;
    for (std::size_t start = 0; start < pending.size(); start += per_chunk) {
      const std::size_t stop = std::min(pending.size(), start + per_chunk);
      batch.resize(static_cast<Eigen::Index>(stop - start) * m, x_.size());
      for (std::size_t k = start; k < stop; ++k) {
        const auto members = coalitions[pending[k]].members();
        auto block = batch.middleRows(static_cast<Eigen::Index>(k - start) * m, m);
        block = background_.samples();
        for (auto i : members) block.col(static_cast<Eigen::Index>(i)).setConstant(x_[static_cast<Eigen::Index>(i)]);
      }
      const Vector pred = model_.predict(batch);
      for (std::size_t k = start; k < stop; ++k) {
        out[pending[k]] = pred.segment(static_cast<Eigen::Index>(k - start) * m, m).mean();
      }
    }
  }

  /// Fast path for D <= 64: values of coalitions given as bit masks.
  void mask_values(std::span<const std::uint64_t> masks, std::span<double> out) const {
    std::vector<Coalition> coalitions;
    coalitions.reserve(masks.size());
    for (auto mask : masks) coalitions.push_back(Coalition::from_mask(mask, dim()));
    values(coalitions, out);
  }

 private:
  static constexpr std::size_t kChunkRows = 1 << 16;

  const PredictiveModel& model_;
  RowVector x_;
  const BackgroundSet& background_;
  double full_value_ = 0.0;
  bool affine_ = false;
  double affine_base_ = 0.0;
  Vector affine_gain_;
};

inline double marginalize_predict(const PredictiveModel& model, const RowVector& x,
                                  const Coalition& coalition, const BackgroundSet& background) {
  if (coalition.dim() != static_cast<std::size_t>(x.size())) {
    throw ValidationError("coalition dimension does not match input");
  }
  return MarginalGame(model, x, background).value(coalition);
}

// ---------------------------------------------------------------------------
// Exact enumeration

/// |S|! (D-|S|-1)! / D! for |S| = 0..D-1.
inline std::vector<double> shapley_weights(std::size_t dim) {
  std::vector<double> w(dim);
  // 1 / (D * C(D-1, s)), with C built incrementally.
  double binom = 1.0;
  for (std::size_t s = 0; s < dim; ++s) {
    w[s] = 1.0 / (static_cast<double>(dim) * binom);
    binom = binom * static_cast<double>(dim - 1 - s) / static_cast<double>(s + 1);
  }
  return w;
}

inline LocalExplanation exact_shapley(const PredictiveModel& model, const RowVector& x,
                                      const ShapleyConfig& config) {
  const auto d = static_cast<std::size_t>(model.dim());
  const int cap = std::min(config.max_exact_dim, 30);
  if (static_cast<int>(d) > cap) {
    throw ValidationError("exact Shapley over D=" + std::to_string(d) +
                          " exceeds the cap of " + std::to_string(cap) +
                          " features; use the kernel method");
  }
  const MarginalGame game(model, x, config.background);
  const std::uint64_t n_masks = std::uint64_t{1} << d;
  std::vector<std::uint64_t> masks(n_masks);
  std::iota(masks.begin(), masks.end(), std::uint64_t{0});
  std::vector<double> v(n_masks);
  game.mask_values(masks, v);

  const auto weights = shapley_weights(d);
  Vector phi = Vector::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    double acc = 0.0;
    for (std::uint64_t mask = 0; mask < n_masks; ++mask) {
      if (mask & bit) continue;
      acc += weights[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
    }
    phi[static_cast<Eigen::Index>(i)] = acc;
  }
  LocalExplanation e;
  e.phi0 = v[0];
  e.phi = std::move(phi);
  e.predicted = game.full_value();
  e.method = ExplainMethod::exact;
  e.n_coalitions_used = static_cast<std::size_t>(n_masks);
  e.seed = config.seed;
  return e;
}

// ---------------------------------------------------------------------------
// KernelSHAP

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return std::round(r);
}

/// Weighted coalition multiset: duplicates accumulate weight.
class CoalitionSample {
 public:
  /// Returns true if `s` was new.
  bool add(const Coalition& s, double weight) {
    auto [it, inserted] = index_.emplace(s, coalitions_.size());
    if (inserted) {
      coalitions_.push_back(s);
      weights_.push_back(weight);
    } else {
      weights_[it->second] += weight;
    }
    return inserted;
  }

  std::size_t size() const { return coalitions_.size(); }
  std::vector<Coalition>& coalitions() { return coalitions_; }
  std::vector<double>& weights() { return weights_; }

 private:
  std::map<Coalition, std::size_t> index_;
  std::vector<Coalition> coalitions_;
  std::vector<double> weights_;
};

template <typename Fn>
void for_each_combination(std::size_t n, std::size_t k, Fn&& fn) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    fn(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

/// Chooses proper coalitions and their kernel weights. Coalition sizes whose
/// complete enumeration fits the remaining budget are enumerated with exact
/// kernel weights, smallest/largest sizes first; the rest of the budget is
/// spent on paired samples with sizes drawn in proportion to kernel mass, and
/// the sampled weights are rescaled to the kernel mass they stand in for.
inline CoalitionSample plan_coalitions(std::size_t d, std::size_t budget, Seed seed) {
  CoalitionSample sample;
  const std::size_t n_sizes = d / 2;          // ceil((d-1)/2)
  const std::size_t n_paired = (d - 1) / 2;   // floor((d-1)/2)
  if (d < 64) {
    const double proper = std::ldexp(1.0, static_cast<int>(d)) - 2.0;
    if (static_cast<double>(budget) > proper) budget = static_cast<std::size_t>(proper);
  }

  std::vector<double> size_weight(n_sizes);
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    size_weight[s - 1] = static_cast<double>(d - 1) / static_cast<double>(s * (d - s));
    if (s <= n_paired) size_weight[s - 1] *= 2.0;
  }
  const double total = std::accumulate(size_weight.begin(), size_weight.end(), 0.0);
  for (auto& w : size_weight) w /= total;

  std::vector<double> remaining = size_weight;
  std::size_t n_full = 0;
  double left = static_cast<double>(budget);
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    const bool paired = s <= n_paired;
    const double n_subsets = binomial(d, s) * (paired ? 2.0 : 1.0);
    if (left * remaining[s - 1] + 1e-8 < n_subsets) break;
    ++n_full;
    left -= n_subsets;
    if (remaining[s - 1] < 1.0) {
      const double norm = 1.0 - remaining[s - 1];
      for (auto& w : remaining) w /= norm;
    }
    double w = size_weight[s - 1] / binomial(d, s);
    if (paired) w /= 2.0;
    for_each_combination(d, s, [&](const std::vector<std::size_t>& idx) {
      Coalition c(d);
      for (auto i : idx) c.insert(i);
      sample.add(c, w);
      if (paired) sample.add(c.complement(), w);
    });
  }

  const std::size_t n_fixed = sample.size();
  auto samples_left = static_cast<std::size_t>(std::max(0.0, left));
  if (n_full == n_sizes || samples_left == 0) return sample;

  std::vector<double> draw(size_weight.begin() + static_cast<std::ptrdiff_t>(n_full),
                           size_weight.end());
  for (std::size_t k = 0; k < draw.size(); ++k) {
    if (n_full + k + 1 <= n_paired) draw[k] /= 2.0;
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_size(draw.begin(), draw.end());
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), std::size_t{0});

  const std::size_t max_draws = 4 * samples_left;
  for (std::size_t drawn = 0; drawn < max_draws && samples_left > 0; ++drawn) {
    const std::size_t s = pick_size(rng) + n_full + 1;
    std::shuffle(perm.begin(), perm.end(), rng);
    Coalition c(d);
    for (std::size_t k = 0; k < s; ++k) c.insert(perm[k]);
    if (sample.add(c, 1.0)) --samples_left;
    if (samples_left > 0 && s <= n_paired) {
      if (sample.add(c.complement(), 1.0)) --samples_left;
    }
  }

  const double weight_left = std::accumulate(
      size_weight.begin() + static_cast<std::ptrdiff_t>(n_full), size_weight.end(), 0.0);
  auto& weights = sample.weights();
  const double sampled = std::accumulate(weights.begin() + static_cast<std::ptrdiff_t>(n_fixed),
                                         weights.end(), 0.0);
  if (sampled > 0.0) {
    for (std::size_t k = n_fixed; k < weights.size(); ++k) weights[k] *= weight_left / sampled;
  }
  return sample;
}

}  // namespace detail

/// Weighted least squares over coalitions for an additive surrogate
/// g(z) = phi0 + sum(phi_i z_i), with phi0 = v(empty) fixed and
/// phi0 + sum(phi) = v(full) imposed by eliminating the last attribution.
inline LocalExplanation kernel_shap(const PredictiveModel& model, const RowVector& x,
                                    const ShapleyConfig& config) {
  const auto d = static_cast<std::size_t>(model.dim());
  const MarginalGame game(model, x, config.background);
  const double v_empty = game.value(Coalition(d));
  const double v_full = game.full_value();
  const double delta = v_full - v_empty;

  LocalExplanation e;
  e.phi0 = v_empty;
  e.predicted = v_full;
  e.method = ExplainMethod::kernel;
  e.seed = config.seed;
  if (d == 1) {
    e.phi = Vector::Constant(1, delta);
    return e;
  }

  const double proper = d < 64 ? std::ldexp(1.0, static_cast<int>(d)) - 2.0 : INFINITY;
  const double needed = std::min(static_cast<double>(d + 2), proper);
  if (static_cast<double>(config.n_coalitions) < needed) {
    throw ValidationError("kernel method needs at least " +
                          std::to_string(static_cast<std::size_t>(needed)) +
                          " coalitions for D=" + std::to_string(d));
  }

  auto plan = detail::plan_coalitions(d, config.n_coalitions, config.seed);
  const auto& coalitions = plan.coalitions();
  const auto& weights = plan.weights();
  std::vector<double> v(coalitions.size());
  game.values(coalitions, v);

  const auto rows = static_cast<Eigen::Index>(coalitions.size());
  const auto unknowns = static_cast<Eigen::Index>(d - 1);
  Eigen::MatrixXd design(rows, unknowns);
  Vector rhs(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& c = coalitions[static_cast<std::size_t>(r)];
    const double sw = std::sqrt(weights[static_cast<std::size_t>(r)]);
    const double z_last = c.contains(d - 1) ? 1.0 : 0.0;
    for (Eigen::Index i = 0; i < unknowns; ++i) {
      design(r, i) = sw * ((c.contains(static_cast<std::size_t>(i)) ? 1.0 : 0.0) - z_last);
    }
    rhs[r] = sw * (v[static_cast<std::size_t>(r)] - v_empty - z_last * delta);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < unknowns) {
    throw NumericalError("kernel regression is under-determined: " +
                         std::to_string(coalitions.size()) +
                         " distinct coalitions do not identify " + std::to_string(d) +
                         " attributions");
  }
  const Vector head = qr.solve(rhs);
  e.phi.resize(static_cast<Eigen::Index>(d));
  e.phi.head(unknowns) = head;
  e.phi[unknowns] = delta - head.sum();
  e.n_coalitions_used = coalitions.size();
  return e;
}

// ---------------------------------------------------------------------------
// Closed form for affine models

/// phi_i = w_i (x_i - mean_i(background)); phi0 = f(background mean).
/// Requires a model that exposes an affine form.
inline LocalExplanation linear_shap(const PredictiveModel& model, const RowVector& x,
                                    const BackgroundSet& background) {
  const auto affine = model.affine_form();
  if (!affine) {
    throw ValidationError("linear method requires a linear model; '" + model.architecture() +
                          "' is not affine, use exact or kernel");
  }
  if (x.size() != model.dim() || background.dim() != model.dim()) {
    throw ValidationError("linear method: dimension mismatch");
  }
  const RowVector mean = background.mean();
  LocalExplanation e;
  e.phi = affine->weights.array() * (x - mean).transpose().array();
  e.phi0 = model.predict_one(mean);
  e.predicted = model.predict_one(x);
  e.method = ExplainMethod::linear;
  e.n_coalitions_used = 0;
  return e;
}

// ---------------------------------------------------------------------------

inline LocalExplanation explain(const PredictiveModel& model, const RowVector& x,
                                const ShapleyConfig& config) {
  switch (config.method) {
    case ExplainMethod::exact: return exact_shapley(model, x, config);
    case ExplainMethod::kernel: return kernel_shap(model, x, config);
    case ExplainMethod::linear: {
      auto e = linear_shap(model, x, config.background);
      e.seed = config.seed;
      return e;
    }
  }
  throw ValidationError("unknown explanation method");
}

/// Seed for row `row` of a batch: splitmix64 of (master, row).
inline Seed derive_row_seed(Seed master, std::size_t row) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(row) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Explains every row of `inputs`. Row i uses derive_row_seed(config.seed, i),
/// so results do not depend on the thread count.
inline std::vector<LocalExplanation> explain_batch(const PredictiveModel& model,
                                                   const Matrix& inputs,
                                                   const ShapleyConfig& config) {
  const auto k = static_cast<std::size_t>(inputs.rows());
  std::vector<LocalExplanation> out(k);
  if (k == 0) return out;
  if (inputs.cols() != model.dim()) {
    throw ValidationError("input width " + std::to_string(inputs.cols()) +
                          " does not match model dimension " + std::to_string(model.dim()));
  }

  std::mutex error_mutex;
  std::size_t error_row = k;
  std::string error_message;
  int error_code = 2;

  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t r = first; r < k; r += stride) {
      {
        std::lock_guard lock(error_mutex);
        if (error_row < r) return;
      }
      try {
        ShapleyConfig row_config = config;
        row_config.seed = derive_row_seed(config.seed, r);
        out[r] = explain(model, inputs.row(static_cast<Eigen::Index>(r)), row_config);
      } catch (const Error& ex) {
        std::lock_guard lock(error_mutex);
        if (r < error_row) {
          error_row = r;
          error_message = ex.what();
          error_code = ex.exit_code();
        }
        return;
      }
    }
  };

  const unsigned threads = std::max(1U, std::min<unsigned>(config.threads, static_cast<unsigned>(k)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  if (error_row < k) {
    const std::string msg = "row " + std::to_string(error_row) + ": " + error_message;
    if (error_code == 3) throw NumericalError(msg);
    throw ValidationError(msg);
  }
  return out;
}

}  // namespace embshap

#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "embshap/data.hpp"
#include "embshap/error.hpp"
#include "embshap/types.hpp"

namespace embshap {

/// Weights and bias of a model whose output is an affine function of its input.
struct AffineForm {
  Vector weights;
  double bias = 0.0;
};

/// The game whose payout the attribution engines distribute: a fitted model
/// mapping K x D inputs to K reals. Fitted models are immutable and `predict`
/// may be called concurrently.
class PredictiveModel {
 public:
  virtual ~PredictiveModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual std::string architecture() const = 0;
  virtual nlohmann::json to_json() const = 0;

  /// Present only for models that are affine in their input.
  virtual std::optional<AffineForm> affine_form() const { return std::nullopt; }

  Vector predict(const Matrix& batch) const {
    if (batch.rows() == 0) return Vector(0);
    if (batch.cols() != dim()) {
      throw ValidationError("input width " + std::to_string(batch.cols()) +
                            " does not match model dimension " + std::to_string(dim()));
    }
    return predict_rows(batch);
  }

  double predict_one(const RowVector& x) const {
    Matrix batch = x;
    return predict(batch)[0];
  }

 protected:
  /// `batch` is nonempty and has dim() columns.
  virtual Vector predict_rows(const Matrix& batch) const = 0;
};

using ModelPtr = std::shared_ptr<const PredictiveModel>;

// ---------------------------------------------------------------------------

/// y = target_mean + c^T (x - feature_means) = intercept + c^T x.
class LinearModel final : public PredictiveModel {
 public:
  LinearModel(double intercept, Vector coefficients)
      : intercept_(intercept),
        coefficients_(std::move(coefficients)),
        feature_means_(Vector::Zero(coefficients_.size())),
        target_mean_(intercept) {
    check();
  }

  LinearModel(Vector coefficients, Vector feature_means, double target_mean)
      : intercept_(target_mean - coefficients.dot(feature_means)),
        coefficients_(std::move(coefficients)),
        feature_means_(std::move(feature_means)),
        target_mean_(target_mean) {
    check();
  }

  double intercept() const { return intercept_; }
  const Vector& coefficients() const { return coefficients_; }
  const Vector& feature_means() const { return feature_means_; }
  double target_mean() const { return target_mean_; }

  Eigen::Index dim() const override { return coefficients_.size(); }
  std::string architecture() const override { return "linear"; }

  std::optional<AffineForm> affine_form() const override {
    return AffineForm{coefficients_, intercept_};
  }

  /// The centered formulation, kept for equivalence checks.
  Vector predict_centered(const Matrix& batch) const {
    return ((batch.rowwise() - feature_means_.transpose()) * coefficients_).array() +
           target_mean_;
  }

  nlohmann::json to_json() const override {
    return {{"architecture", architecture()},
            {"intercept", intercept_},
            {"coefficients", std::vector<double>(coefficients_.begin(), coefficients_.end())},
            {"feature_means",
             std::vector<double>(feature_means_.begin(), feature_means_.end())},
            {"target_mean", target_mean_}};
  }

 protected:
  Vector predict_rows(const Matrix& batch) const override {
    return (batch * coefficients_).array() + intercept_;
  }

 private:
  void check() const {
    if (coefficients_.size() < 1) throw ValidationError("linear model needs D >= 1");
    if (feature_means_.size() != coefficients_.size()) {
      throw ValidationError("feature_means length does not match coefficients");
    }
  }

  double intercept_;
  Vector coefficients_;
  Vector feature_means_;
  double target_mean_;
};

/// Ridge regression on centered data: minimizes
/// mean((y - yhat)^2) + lambda * |c|^2.
inline LinearModel fit_ridge(const Dataset& train, double ridge_lambda) {
  if (train.target_kind() != TargetKind::continuous) {
    throw ValidationError("regressor requires continuous target");
  }
  if (train.size() < 2) throw ValidationError("ridge fit needs at least two rows");
  if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) {
    throw ValidationError("ridge lambda must be a nonnegative real");
  }
  const auto n = static_cast<double>(train.size());
  const Vector x_mean = train.embeddings().colwise().mean().transpose();
  const double y_mean = train.targets().mean();
  const Eigen::MatrixXd xc = train.embeddings().rowwise() - x_mean.transpose();
  const Vector yc = train.targets().array() - y_mean;

  Eigen::MatrixXd gram = (xc.transpose() * xc) / n;
  gram.diagonal().array() += ridge_lambda;
  const Vector rhs = (xc.transpose() * yc) / n;

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    if (ridge_lambda == 0.0) {
      throw NumericalError(
          "normal equations are singular; use a positive ridge lambda");
    }
    throw NumericalError("normal equations are numerically singular even with ridge lambda " +
                         detail::format_g17(ridge_lambda));
  }
  Vector coef = llt.solve(rhs);
  return LinearModel(std::move(coef), x_mean, y_mean);
}

// ---------------------------------------------------------------------------

struct MLPConfig {
  int hidden1 = 32;
  int hidden2 = 16;
  double learning_rate = 1e-2;
  int epochs = 200;
  int batch_size = 32;
  /// L2 penalty coefficient on all parameters, in standardized units.
  double weight_decay = 1e-2;
  Seed seed = 0;

  nlohmann::json to_json() const {
    return {{"hidden1", hidden1},       {"hidden2", hidden2},
            {"learning_rate", learning_rate}, {"epochs", epochs},
            {"batch_size", batch_size}, {"weight_decay", weight_decay},
            {"seed", seed}};
  }

  static MLPConfig from_json(const nlohmann::json& j) {
    MLPConfig c;
    c.hidden1 = j.at("hidden1").get<int>();
    c.hidden2 = j.at("hidden2").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.weight_decay = j.value("weight_decay", 1e-2);
    c.seed = j.at("seed").get<Seed>();
    return c;
  }
};

/// Two tanh hidden layers and a linear output unit. Inputs are standardized
/// with training statistics and the output is rescaled to target units, so
/// the network itself works on unit-scale quantities.
class MLPModel final : public PredictiveModel {
 public:
  /// Seeded initialization: weights ~ N(0, 1/fan_in), biases zero.
  MLPModel(Eigen::Index dim, int hidden1, int hidden2, Seed seed)
      : w1_(hidden1, dim),
        b1_(Vector::Zero(hidden1)),
        w2_(hidden2, hidden1),
        b2_(Vector::Zero(hidden2)),
        w3_(hidden2),
        b3_(0.0),
        input_mean_(Vector::Zero(dim)),
        input_scale_(Vector::Ones(dim)) {
    if (dim < 1 || hidden1 < 1 || hidden2 < 1) {
      throw ValidationError("MLP layer widths must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](auto& m, Eigen::Index fan_in) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
    };
    fill(w1_, dim);
    fill(w2_, hidden1);
    fill(w3_, hidden2);
  }

  Eigen::Index dim() const override { return w1_.cols(); }
  std::string architecture() const override { return "mlp"; }
  int hidden1() const { return static_cast<int>(w1_.rows()); }
  int hidden2() const { return static_cast<int>(w2_.rows()); }

  void set_normalization(Vector input_mean, Vector input_scale, double target_mean,
                         double target_scale) {
    input_mean_ = std::move(input_mean);
    input_scale_ = std::move(input_scale);
    target_mean_ = target_mean;
    target_scale_ = target_scale;
  }

  Eigen::Index parameter_count() const {
    return w1_.size() + b1_.size() + w2_.size() + b2_.size() + w3_.size() + 1;
  }

  /// Flattened as w1, b1, w2, b2, w3, b3 (row-major weight matrices).
  Vector parameters() const {
    Vector p(parameter_count());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) p[at++] = m.data()[i];
    };
    put(w1_);
    put(b1_);
    put(w2_);
    put(b2_);
    put(w3_);
    p[at] = b3_;
    return p;
  }

  void set_parameters(const Vector& p) {
    if (p.size() != parameter_count()) throw ValidationError("MLP parameter count mismatch");
    Eigen::Index at = 0;
    auto take = [&](auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = p[at++];
    };
    take(w1_);
    take(b1_);
    take(w2_);
    take(b2_);
    take(w3_);
    b3_ = p[at];
  }

  /// Mean squared error in standardized target units over (x, y); fills
  /// `grad` (w.r.t. parameters()) when non-null.
  double loss(const Matrix& x, const Vector& y, Vector* grad = nullptr) const {
    const auto k = static_cast<double>(x.rows());
    const Eigen::MatrixXd z = standardize(x);
    const Eigen::MatrixXd a1 = ((z * w1_.transpose()).rowwise() + b1_.transpose()).array().tanh();
    const Eigen::MatrixXd a2 = ((a1 * w2_.transpose()).rowwise() + b2_.transpose()).array().tanh();
    const Vector out = (a2 * w3_).array() + b3_;
    const Vector target = (y.array() - target_mean_) / target_scale_;
    const Vector resid = out - target;
    const double value = resid.squaredNorm() / k;
    if (grad == nullptr) return value;

    const Vector d_out = (2.0 / k) * resid;
    const Eigen::MatrixXd d_a2 = d_out * w3_.transpose();
    const Eigen::MatrixXd d_h2 = d_a2.array() * (1.0 - a2.array().square());
    const Eigen::MatrixXd d_a1 = d_h2 * w2_;
    const Eigen::MatrixXd d_h1 = d_a1.array() * (1.0 - a1.array().square());

    WeightMatrix g_w1 = d_h1.transpose() * z;
    Vector g_b1 = d_h1.colwise().sum().transpose();
    WeightMatrix g_w2 = d_h2.transpose() * a1;
    Vector g_b2 = d_h2.colwise().sum().transpose();
    Vector g_w3 = a2.transpose() * d_out;
    const double g_b3 = d_out.sum();

    grad->resize(parameter_count());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) (*grad)[at++] = m.data()[i];
    };
    put(g_w1);
    put(g_b1);
    put(g_w2);
    put(g_b2);
    put(g_w3);
    (*grad)[at] = g_b3;
    return value;
  }

  nlohmann::json to_json() const override {
    const Vector p = parameters();
    return {{"architecture", architecture()},
            {"dim", dim()},
            {"hidden1", hidden1()},
            {"hidden2", hidden2()},
            {"activation", "tanh"},
            {"parameters", std::vector<double>(p.begin(), p.end())},
            {"input_mean", std::vector<double>(input_mean_.begin(), input_mean_.end())},
            {"input_scale", std::vector<double>(input_scale_.begin(), input_scale_.end())},
            {"target_mean", target_mean_},
            {"target_scale", target_scale_}};
  }

 protected:
  Vector predict_rows(const Matrix& batch) const override {
    const Eigen::MatrixXd z = standardize(batch);
    const Eigen::MatrixXd a1 = ((z * w1_.transpose()).rowwise() + b1_.transpose()).array().tanh();
    const Eigen::MatrixXd a2 = ((a1 * w2_.transpose()).rowwise() + b2_.transpose()).array().tanh();
    return ((a2 * w3_).array() + b3_) * target_scale_ + target_mean_;
  }

 private:
  using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Eigen::MatrixXd standardize(const Matrix& x) const {
    return (x.rowwise() - input_mean_.transpose()).array().rowwise() /
           input_scale_.transpose().array();
  }

  WeightMatrix w1_;
  Vector b1_;
  WeightMatrix w2_;
  Vector b2_;
  Vector w3_;
  double b3_;
  Vector input_mean_;
  Vector input_scale_;
  double target_mean_ = 0.0;
  double target_scale_ = 1.0;
};

/// Plain mini-batch gradient descent on mean squared error. Rows are visited
/// in a fresh seeded permutation each epoch.
inline MLPModel fit_mlp(const Dataset& train, const MLPConfig& config) {
  if (train.target_kind() != TargetKind::continuous) {
    throw ValidationError("regressor requires continuous target");
  }
  if (train.size() < 2) throw ValidationError("MLP fit needs at least two rows");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0) ||
      !(config.weight_decay >= 0.0)) {
    throw ValidationError("invalid MLP training configuration");
  }
  const Matrix& x = train.embeddings();
  const Vector& y = train.targets();

  MLPModel model(train.dim(), config.hidden1, config.hidden2, config.seed);
  const Vector mean = x.colwise().mean().transpose();
  Vector scale = ((x.rowwise() - mean.transpose()).array().square().colwise().mean())
                     .sqrt()
                     .transpose();
  for (Eigen::Index d = 0; d < scale.size(); ++d) {
    if (!(scale[d] > 0.0)) scale[d] = 1.0;
  }
  const double y_mean = y.mean();
  double y_scale = std::sqrt((y.array() - y_mean).square().mean());
  if (!(y_scale > 0.0)) y_scale = 1.0;
  model.set_normalization(mean, scale, y_mean, y_scale);

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.size()));
  for (Eigen::Index i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  Vector params = model.parameters();
  Vector grad;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Matrix xb(static_cast<Eigen::Index>(stop - start), x.cols());
      Vector yb(static_cast<Eigen::Index>(stop - start));
      for (std::size_t k = start; k < stop; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = x.row(order[k]);
        yb[static_cast<Eigen::Index>(k - start)] = y[order[k]];
      }
      const double batch_loss = model.loss(xb, yb, &grad);
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        throw NumericalError("MLP training diverged at epoch " + std::to_string(epoch));
      }
      params -= config.learning_rate * (grad + config.weight_decay * params);
      model.set_parameters(params);
    }
    const double epoch_loss = model.loss(x, y);
    if (!std::isfinite(epoch_loss)) {
      throw NumericalError("MLP training diverged at epoch " + std::to_string(epoch));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------

/// Arithmetic mean of its members' predictions.
class VotingModel final : public PredictiveModel {
 public:
  explicit VotingModel(std::vector<ModelPtr> members) : members_(std::move(members)) {
    if (members_.size() < 2) throw ValidationError("voting model needs at least two members");
    for (const auto& m : members_) {
      if (!m) throw ValidationError("null voting member");
      if (m->dim() != members_.front()->dim()) {
        throw ValidationError("voting members disagree on input dimension");
      }
    }
  }

  const std::vector<ModelPtr>& members() const { return members_; }
  Eigen::Index dim() const override { return members_.front()->dim(); }
  std::string architecture() const override { return "voting"; }

  std::optional<AffineForm> affine_form() const override {
    AffineForm sum{Vector::Zero(dim()), 0.0};
    for (const auto& m : members_) {
      auto f = m->affine_form();
      if (!f) return std::nullopt;
      sum.weights += f->weights;
      sum.bias += f->bias;
    }
    const auto n = static_cast<double>(members_.size());
    sum.weights /= n;
    sum.bias /= n;
    return sum;
  }

  nlohmann::json to_json() const override {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : members_) members.push_back(m->to_json());
    return {{"architecture", architecture()}, {"members", std::move(members)}};
  }

 protected:
  Vector predict_rows(const Matrix& batch) const override {
    Vector sum = Vector::Zero(batch.rows());
    for (const auto& m : members_) sum += m->predict(batch);
    return sum / static_cast<double>(members_.size());
  }

 private:
  std::vector<ModelPtr> members_;
};

// ---------------------------------------------------------------------------

/// Two-class linear discriminant. predict() returns the real-valued decision
/// score w^T x + bias; the label is score > 0.
class LDAModel final : public PredictiveModel {
 public:
  LDAModel(Vector mean0, Vector mean1, Vector weights, double bias, double prior0,
           double prior1)
      : mean0_(std::move(mean0)),
        mean1_(std::move(mean1)),
        weights_(std::move(weights)),
        bias_(bias),
        prior0_(prior0),
        prior1_(prior1) {
    if (weights_.size() < 1 || mean0_.size() != weights_.size() ||
        mean1_.size() != weights_.size()) {
      throw ValidationError("LDA parameter sizes disagree");
    }
  }

  const Vector& class_mean(int label) const { return label == 0 ? mean0_ : mean1_; }
  const Vector& weights() const { return weights_; }
  double bias() const { return bias_; }
  double prior(int label) const { return label == 0 ? prior0_ : prior1_; }

  Eigen::Index dim() const override { return weights_.size(); }
  std::string architecture() const override { return "lda"; }

  std::optional<AffineForm> affine_form() const override {
    return AffineForm{weights_, bias_};
  }

  std::vector<int> predict_labels(const Matrix& batch) const {
    const Vector s = predict(batch);
    std::vector<int> labels(static_cast<std::size_t>(s.size()));
    for (Eigen::Index i = 0; i < s.size(); ++i) labels[static_cast<std::size_t>(i)] = s[i] > 0.0;
    return labels;
  }

  nlohmann::json to_json() const override {
    auto vec = [](const Vector& v) { return std::vector<double>(v.begin(), v.end()); };
    return {{"architecture", architecture()},
            {"mean0", vec(mean0_)},
            {"mean1", vec(mean1_)},
            {"weights", vec(weights_)},
            {"bias", bias_},
            {"prior0", prior0_},
            {"prior1", prior1_}};
  }

 protected:
  Vector predict_rows(const Matrix& batch) const override {
    return (batch * weights_).array() + bias_;
  }

 private:
  Vector mean0_;
  Vector mean1_;
  Vector weights_;
  double bias_;
  double prior0_;
  double prior1_;
};

/// Pooled within-class covariance shrunk toward its diagonal:
/// (1 - shrinkage) * S + shrinkage * diag(S).
inline LDAModel fit_lda(const Dataset& train, double shrinkage) {
  if (train.target_kind() != TargetKind::binary) {
    throw ValidationError("classifier requires binary target");
  }
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) {
    throw ValidationError("LDA shrinkage must lie in [0, 1]");
  }
  const Matrix& x = train.embeddings();
  const Vector& y = train.targets();
  const Eigen::Index d = train.dim();
  Vector sum0 = Vector::Zero(d), sum1 = Vector::Zero(d);
  Eigen::Index n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (y[i] > 0.5) {
      sum1 += x.row(i).transpose();
      ++n1;
    } else {
      sum0 += x.row(i).transpose();
      ++n0;
    }
  }
  if (n0 == 0 || n1 == 0) {
    throw ValidationError("LDA needs both classes present (class " +
                          std::string(n0 == 0 ? "0" : "1") + " is absent)");
  }
  const Vector mean0 = sum0 / static_cast<double>(n0);
  const Vector mean1 = sum1 / static_cast<double>(n1);

  Eigen::MatrixXd centered(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    centered.row(i) = x.row(i) - (y[i] > 0.5 ? mean1 : mean0).transpose();
  }
  const auto dof = static_cast<double>(std::max<Eigen::Index>(x.rows() - 2, 1));
  Eigen::MatrixXd cov = (centered.transpose() * centered) / dof;
  const Vector diag = cov.diagonal();
  cov *= (1.0 - shrinkage);
  cov.diagonal() += shrinkage * diag;

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    if (shrinkage == 0.0) {
      throw NumericalError("pooled covariance is singular; use a positive shrinkage");
    }
    throw NumericalError("pooled covariance is singular even after shrinkage");
  }
  Vector w = llt.solve(mean1 - mean0);
  const double prior0 = static_cast<double>(n0) / static_cast<double>(x.rows());
  const double prior1 = static_cast<double>(n1) / static_cast<double>(x.rows());
  const double bias = -0.5 * w.dot(mean0 + mean1) + std::log(prior1 / prior0);
  return LDAModel(mean0, mean1, std::move(w), bias, prior0, prior1);
}

// ---------------------------------------------------------------------------
// Model specs and serialization

enum class ModelKind { ridge, mlp, voting, lda };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ridge: return "ridge";
    case ModelKind::mlp: return "mlp";
    case ModelKind::voting: return "vr";
    case ModelKind::lda: return "lda";
  }
  return "?";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "ridge" || s == "lr") return ModelKind::ridge;
  if (s == "mlp") return ModelKind::mlp;
  if (s == "vr" || s == "voting") return ModelKind::voting;
  if (s == "lda") return ModelKind::lda;
  throw UsageError("unknown model '" + std::string(s) + "' (expected ridge, mlp, vr, lda)");
}

/// Everything needed to fit a model from data.
struct ModelSpec {
  ModelKind kind = ModelKind::ridge;
  double ridge_lambda = 1e-6;
  double lda_shrinkage = 1e-3;
  MLPConfig mlp;
  std::vector<ModelKind> members = {ModelKind::ridge, ModelKind::mlp};

  std::string label() const {
    if (kind != ModelKind::voting) return to_string(kind);
    std::string s = "vr(";
    for (std::size_t i = 0; i < members.size(); ++i) {
      s += (i ? "+" : "") + to_string(members[i]);
    }
    return s + ")";
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"kind", to_string(kind)}};
    if (kind == ModelKind::ridge || kind == ModelKind::voting) j["ridge_lambda"] = ridge_lambda;
    if (kind == ModelKind::lda || kind == ModelKind::voting) j["lda_shrinkage"] = lda_shrinkage;
    if (kind == ModelKind::mlp || kind == ModelKind::voting) j["mlp"] = mlp.to_json();
    if (kind == ModelKind::voting) {
      std::vector<std::string> names;
      for (auto m : members) names.push_back(to_string(m));
      j["members"] = names;
    }
    return j;
  }
};

inline ModelPtr fit_model(const ModelSpec& spec, const Dataset& train) {
  switch (spec.kind) {
    case ModelKind::ridge:
      return std::make_shared<LinearModel>(fit_ridge(train, spec.ridge_lambda));
    case ModelKind::mlp:
      return std::make_shared<MLPModel>(fit_mlp(train, spec.mlp));
    case ModelKind::lda:
      return std::make_shared<LDAModel>(fit_lda(train, spec.lda_shrinkage));
    case ModelKind::voting: {
      if (spec.members.size() < 2) throw ValidationError("voting model needs at least two members");
      std::vector<ModelPtr> members;
      for (auto kind : spec.members) {
        if (kind == ModelKind::voting) throw ValidationError("nested voting models are not supported");
        ModelSpec member = spec;
        member.kind = kind;
        members.push_back(fit_model(member, train));
      }
      return std::make_shared<VotingModel>(std::move(members));
    }
  }
  throw ValidationError("unknown model kind");
}

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const PredictiveModel& model) {
  nlohmann::json j = model.to_json();
  j["format_version"] = kModelFormatVersion;
  return j;
}

namespace detail {

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline ModelPtr model_from_json_body(const nlohmann::json& j) {
  const auto arch = j.at("architecture").get<std::string>();
  if (arch == "linear") {
    return std::make_shared<LinearModel>(vector_from_json(j.at("coefficients")),
                                         vector_from_json(j.at("feature_means")),
                                         j.at("target_mean").get<double>());
  }
  if (arch == "mlp") {
    auto m = std::make_shared<MLPModel>(j.at("dim").get<Eigen::Index>(), j.at("hidden1").get<int>(),
                                        j.at("hidden2").get<int>(), 0);
    m->set_parameters(vector_from_json(j.at("parameters")));
    m->set_normalization(vector_from_json(j.at("input_mean")),
                         vector_from_json(j.at("input_scale")),
                         j.at("target_mean").get<double>(), j.at("target_scale").get<double>());
    return m;
  }
  if (arch == "voting") {
    std::vector<ModelPtr> members;
    for (const auto& mj : j.at("members")) members.push_back(model_from_json_body(mj));
    return std::make_shared<VotingModel>(std::move(members));
  }
  if (arch == "lda") {
    return std::make_shared<LDAModel>(vector_from_json(j.at("mean0")),
                                      vector_from_json(j.at("mean1")),
                                      vector_from_json(j.at("weights")), j.at("bias").get<double>(),
                                      j.at("prior0").get<double>(), j.at("prior1").get<double>());
  }
  throw ValidationError("unknown model architecture '" + arch + "'");
}

}  // namespace detail

inline ModelPtr model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ValidationError("unsupported model format version " + std::to_string(version));
    }
    return detail::model_from_json_body(j);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed model JSON: ") + ex.what(), 0);
  }
}

}  // namespace embshap

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "embshap/data.hpp"
#include "embshap/shapley.hpp"
#include "oracles.hpp"

namespace embshap {
namespace {

using testing::FunctionModel;

RowVector row(std::initializer_list<double> v) {
  RowVector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

BackgroundSet zeros(Eigen::Index d) { return BackgroundSet(Matrix::Zero(1, d)); }

FunctionModel sum_model(Eigen::Index d) {
  return FunctionModel(d, [](const RowVector& r) { return r.sum(); });
}

/// Non-additive smooth function with pairwise and triple interactions.
FunctionModel interaction_model(Eigen::Index d) {
  return FunctionModel(d, [](const RowVector& r) {
    double acc = 0.3;
    for (Eigen::Index i = 0; i < r.size(); ++i) acc += (0.5 + 0.1 * static_cast<double>(i)) * r[i];
    for (Eigen::Index i = 0; i + 1 < r.size(); ++i) acc += r[i] * r[i + 1];
    if (r.size() >= 3) acc += std::tanh(r[0] * r[1] * r[2]);
    return acc;
  });
}

TEST(Coalition, BasicOperations) {
  Coalition c(5);
  c.insert(1);
  c.insert(3);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_TRUE(c.contains(3));
  EXPECT_FALSE(c.contains(2));
  EXPECT_EQ(c.members(), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(c.complement().members(), (std::vector<std::size_t>{0, 2, 4}));
  c.erase(1);
  EXPECT_EQ(c, Coalition::from_mask(0b1000, 5));
  EXPECT_THROW(c.insert(5), ValidationError);
  EXPECT_THROW(Coalition::from_mask(0b100000, 5), ValidationError);
  EXPECT_EQ(Coalition::full(5).size(), 5u);
}

TEST(Coalition, WideDimensions) {
  Coalition c(130);
  c.insert(0);
  c.insert(64);
  c.insert(129);
  EXPECT_EQ(c.size(), 3u);
  EXPECT_EQ(c.complement().size(), 127u);
  EXPECT_TRUE(c.contains(129));
  EXPECT_FALSE(c.contains(128));
  EXPECT_EQ(Coalition::full(130).size(), 130u);
}

TEST(Marginalize, HandExamples) {
  const auto model = sum_model(2);
  const RowVector x = row({2, 3});
  EXPECT_EQ(marginalize_predict(model, x, Coalition::full(2), zeros(2)), 5.0);
  EXPECT_EQ(marginalize_predict(model, x, Coalition::from_mask(0b01, 2), zeros(2)), 2.0);
  EXPECT_EQ(marginalize_predict(*testing::constant_model(2, 4.0), x, Coalition(2), zeros(2)), 4.0);

  // Background rows (0,0) and (2,2): v({1}) = 3 + mean(0, 2) = 4.
  const BackgroundSet bg(Matrix{{0, 0}, {2, 2}});
  EXPECT_DOUBLE_EQ(marginalize_predict(model, x, Coalition::from_mask(0b10, 2), bg), 4.0);
  EXPECT_DOUBLE_EQ(marginalize_predict(model, x, Coalition(2), bg), 2.0);
}

TEST(Marginalize, AgreesWithRowByRowOracle) {
  std::mt19937_64 rng(3);
  const auto model = interaction_model(6);
  const BackgroundSet bg(testing::random_matrix(7, 6, rng));
  const RowVector x = testing::random_vector(6, rng).transpose();
  const MarginalGame game(model, x, bg);
  for (std::uint64_t m = 0; m < 64; ++m) {
    EXPECT_NEAR(game.value(Coalition::from_mask(m, 6)),
                testing::naive_value(model, x, bg.samples(), m), 1e-12);
  }
}

TEST(Marginalize, AffineModelsMatchRowByRowOracle) {
  std::mt19937_64 rng(4);
  const LinearModel model(-0.7, testing::random_vector(5, rng));
  const BackgroundSet bg(testing::random_matrix(9, 5, rng));
  const RowVector x = testing::random_vector(5, rng).transpose();
  const MarginalGame game(model, x, bg);
  for (std::uint64_t m = 0; m < 32; ++m) {
    EXPECT_NEAR(game.value(Coalition::from_mask(m, 5)),
                testing::naive_value(model, x, bg.samples(), m), 1e-12);
  }
}

TEST(Marginalize, DimensionMismatch) {
  const auto model = sum_model(3);
  EXPECT_THROW(MarginalGame(model, row({1, 2}), zeros(3)), ValidationError);
  EXPECT_THROW(MarginalGame(model, row({1, 2, 3}), zeros(2)), ValidationError);
}

TEST(ShapleyWeights, SumToOnePerFeature) {
  for (std::size_t d = 1; d <= 12; ++d) {
    const auto w = shapley_weights(d);
    double total = 0;
    for (std::size_t s = 0; s < d; ++s) total += w[s] * detail::binomial(d - 1, s);
    EXPECT_NEAR(total, 1.0, 1e-12) << d;
  }
}

TEST(ExactShapley, AdditiveModel) {
  const auto model = sum_model(2);
  const auto e = exact_shapley(model, row({2, 3}), ShapleyConfig(zeros(2)));
  EXPECT_EQ(e.phi0, 0.0);
  EXPECT_NEAR(e.phi[0], 2.0, 1e-15);
  EXPECT_NEAR(e.phi[1], 3.0, 1e-15);
  EXPECT_EQ(e.predicted, 5.0);
  EXPECT_EQ(e.n_coalitions_used, 4u);
}

TEST(ExactShapley, AndGameSplitsEvenly) {
  const FunctionModel model(2, [](const RowVector& r) { return r[0] * r[1]; });
  const auto e = exact_shapley(model, row({1, 1}), ShapleyConfig(zeros(2)));
  EXPECT_DOUBLE_EQ(e.phi[0], 0.5);
  EXPECT_DOUBLE_EQ(e.phi[1], 0.5);
}

TEST(ExactShapley, DummyFeatureGetsZero) {
  std::mt19937_64 rng(8);
  const FunctionModel model(4, [](const RowVector& r) { return std::sin(r[0]) * r[1] + r[3]; });
  const BackgroundSet bg(testing::random_matrix(5, 4, rng));
  const auto e = exact_shapley(model, testing::random_vector(4, rng).transpose(), ShapleyConfig(bg));
  EXPECT_EQ(e.phi[2], 0.0);
}

TEST(ExactShapley, SymmetricFeaturesShareEqually) {
  std::mt19937_64 rng(9);
  const FunctionModel model(3, [](const RowVector& r) { return std::exp(r[0] + r[1]) + r[2]; });
  Matrix bg = testing::random_matrix(6, 3, rng);
  bg.col(1) = bg.col(0);
  const auto e = exact_shapley(model, row({0.4, 0.4, -1}), ShapleyConfig(BackgroundSet(bg)));
  EXPECT_NEAR(e.phi[0], e.phi[1], 1e-12);
}

TEST(ExactShapley, MatchesBruteForceOracle) {
  for (Seed seed = 0; seed < 6; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(seed);
    const auto model = interaction_model(d);
    const BackgroundSet bg(testing::random_matrix(4, d, rng));
    const RowVector x = testing::random_vector(d, rng).transpose();
    const auto e = exact_shapley(model, x, ShapleyConfig(bg));
    const Vector oracle = testing::brute_force_shapley(model, x, bg.samples());
    for (Eigen::Index i = 0; i < d; ++i) EXPECT_NEAR(e.phi[i], oracle[i], 1e-10) << d << " " << i;
    EXPECT_LE(std::abs(e.efficiency_gap()), 1e-10);
  }
}

TEST(ExactShapley, LinearInTheModel) {
  std::mt19937_64 rng(13);
  const auto f = interaction_model(4);
  const FunctionModel g(4, [](const RowVector& r) { return std::cos(r[1]) * r[2] - r[0]; });
  const FunctionModel h(4, [&](const RowVector& r) { return 0.5 * (f.predict_one(r) + g.predict_one(r)); });
  const BackgroundSet bg(testing::random_matrix(5, 4, rng));
  const RowVector x = testing::random_vector(4, rng).transpose();
  const ShapleyConfig config(bg);
  const Vector expected = 0.5 * (exact_shapley(f, x, config).phi + exact_shapley(g, x, config).phi);
  EXPECT_LE((exact_shapley(h, x, config).phi - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ExactShapley, CapIsEnforced) {
  const auto model = sum_model(17);
  EXPECT_THROW(exact_shapley(model, RowVector::Zero(17), ShapleyConfig(zeros(17))), ValidationError);
  ShapleyConfig config(zeros(3));
  config.max_exact_dim = 2;
  EXPECT_THROW(exact_shapley(sum_model(3), row({1, 2, 3}), config), ValidationError);
}

TEST(KernelShap, FullEnumerationMatchesExact) {
  std::mt19937_64 rng(21);
  const auto model = interaction_model(8);
  const BackgroundSet bg(testing::random_matrix(6, 8, rng));
  const RowVector x = testing::random_vector(8, rng).transpose();
  ShapleyConfig config(bg, ExplainMethod::kernel);
  config.n_coalitions = 254;
  const auto k = kernel_shap(model, x, config);
  const auto e = exact_shapley(model, x, config);
  EXPECT_EQ(k.n_coalitions_used, 254u);
  EXPECT_LE((k.phi - e.phi).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(k.phi0, e.phi0, 1e-12);
}

TEST(KernelShap, TwoFeatures) {
  const FunctionModel model(2, [](const RowVector& r) { return r[0] * r[1] + r[0]; });
  const BackgroundSet bg(Matrix{{0.5, -1}, {1, 2}});
  ShapleyConfig config(bg, ExplainMethod::kernel);
  config.n_coalitions = 2;
  const RowVector x = row({2, 3});
  const Vector oracle = testing::brute_force_shapley(model, x, bg.samples());
  const auto k = kernel_shap(model, x, config);
  EXPECT_LE((k.phi - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(KernelShap, SingleFeature) {
  const auto model = sum_model(1);
  ShapleyConfig config(BackgroundSet(Matrix{{1.0}}), ExplainMethod::kernel);
  const auto k = kernel_shap(model, row({4}), config);
  EXPECT_EQ(k.phi0, 1.0);
  EXPECT_EQ(k.phi[0], 3.0);
}

TEST(KernelShap, SampledIsDeterministicAndEfficient) {
  std::mt19937_64 rng(5);
  const auto model = interaction_model(12);
  const BackgroundSet bg(testing::random_matrix(10, 12, rng));
  const RowVector x = testing::random_vector(12, rng).transpose();
  ShapleyConfig config(bg, ExplainMethod::kernel);
  config.n_coalitions = 200;
  config.seed = 77;
  const auto a = kernel_shap(model, x, config);
  const auto b = kernel_shap(model, x, config);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_LE(a.n_coalitions_used, 200u);
  EXPECT_LE(std::abs(a.efficiency_gap()), 1e-9 * std::max(1.0, std::abs(a.predicted)));
  config.seed = 78;
  EXPECT_NE(kernel_shap(model, x, config).phi, a.phi);
}

TEST(KernelShap, AdditiveModelIsRecoveredFromSamples) {
  std::mt19937_64 rng(6);
  const FunctionModel model(20, [](const RowVector& r) {
    double acc = 0;
    for (Eigen::Index i = 0; i < r.size(); ++i) acc += std::sin(r[i] * (1 + static_cast<double>(i) / 10));
    return acc;
  });
  const BackgroundSet bg(testing::random_matrix(5, 20, rng));
  const RowVector x = testing::random_vector(20, rng).transpose();
  ShapleyConfig config(bg, ExplainMethod::kernel);
  config.n_coalitions = 300;
  const auto k = kernel_shap(model, x, config);
  // Additive game: phi_i = f_i(x_i) - mean_b f_i(b_i), exactly.
  for (Eigen::Index i = 0; i < 20; ++i) {
    const double c = 1 + static_cast<double>(i) / 10;
    const double expected = std::sin(x[i] * c) - bg.samples().col(i).unaryExpr([c](double v) {
      return std::sin(v * c);
    }).mean();
    EXPECT_NEAR(k.phi[i], expected, 1e-9) << i;
  }
}

TEST(KernelShap, TooFewCoalitions) {
  const auto model = sum_model(8);
  ShapleyConfig config(zeros(8), ExplainMethod::kernel);
  config.n_coalitions = 9;
  EXPECT_THROW(kernel_shap(model, RowVector::Zero(8), config), ValidationError);
  // At 64 the singleton and complement sizes are enumerated, so the design has full rank.
  config.n_coalitions = 64;
  EXPECT_NO_THROW(kernel_shap(model, RowVector::Ones(8), config));
}

TEST(PlanCoalitions, EnumeratesSmallSizesWithKernelWeights) {
  const auto plan = detail::plan_coalitions(10, 1022, 0);
  EXPECT_EQ(plan.size(), 1022u);
  auto copy = plan;
  double total = 0;
  for (double w : copy.weights()) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const auto sampled = detail::plan_coalitions(10, 100, 0);
  EXPECT_LE(sampled.size(), 100u);
}

TEST(LinearShap, HandExample) {
  const LinearModel model(1.0, Vector{{2.0, -1.0}});
  const BackgroundSet bg(Matrix{{0, 0}, {2, 4}});
  const auto e = linear_shap(model, row({3, 1}), bg);
  EXPECT_DOUBLE_EQ(e.phi[0], 2.0 * (3 - 1));
  EXPECT_DOUBLE_EQ(e.phi[1], -1.0 * (1 - 2));
  EXPECT_DOUBLE_EQ(e.phi0, 1.0 + 2.0 - 2.0);
  EXPECT_DOUBLE_EQ(e.efficiency_gap(), 0.0);
}

TEST(LinearShap, MatchesExactForAffineModels) {
  std::mt19937_64 rng(17);
  const LinearModel model(0.25, testing::random_vector(6, rng));
  const BackgroundSet bg(testing::random_matrix(9, 6, rng));
  const RowVector x = testing::random_vector(6, rng).transpose();
  const auto lin = linear_shap(model, x, bg);
  const auto ex = exact_shapley(model, x, ShapleyConfig(bg));
  EXPECT_LE((lin.phi - ex.phi).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(lin.phi0, ex.phi0, 1e-12);
}

TEST(LinearShap, RejectsNonAffine) {
  const auto model = sum_model(2);
  EXPECT_THROW(linear_shap(model, row({1, 2}), zeros(2)), ValidationError);
}

TEST(ExplainBatch, EmptyInput) {
  ShapleyConfig config(zeros(3), ExplainMethod::kernel);
  EXPECT_TRUE(explain_batch(sum_model(3), Matrix(0, 3), config).empty());
}

TEST(ExplainBatch, RowsMatchSingleCallsAndThreadCount) {
  std::mt19937_64 rng(31);
  const auto model = interaction_model(10);
  const BackgroundSet bg(testing::random_matrix(8, 10, rng));
  const Matrix inputs = testing::random_matrix(9, 10, rng);
  ShapleyConfig config(bg, ExplainMethod::kernel);
  config.n_coalitions = 64;
  config.seed = 5;
  const auto serial = explain_batch(model, inputs, config);
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    ShapleyConfig single = config;
    single.seed = derive_row_seed(config.seed, static_cast<std::size_t>(r));
    EXPECT_EQ(explain(model, inputs.row(r), single).phi, serial[static_cast<std::size_t>(r)].phi);
  }
  config.threads = 4;
  const auto parallel = explain_batch(model, inputs, config);
  for (std::size_t r = 0; r < serial.size(); ++r) {
    EXPECT_EQ(parallel[r].phi, serial[r].phi);
    EXPECT_EQ(parallel[r].seed, serial[r].seed);
  }
}

TEST(ExplainBatch, ReportsFirstFailingRow) {
  const FunctionModel model(2, [](const RowVector& r) { return r.sum(); });
  Matrix inputs{{1, 2}, {3, 4}, {NAN, 0}, {NAN, 1}};
  ShapleyConfig config(zeros(2));
  config.threads = 3;
  try {
    explain_batch(model, inputs, config);
    FAIL() << "expected failure";
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("row 2:", 0), 0u) << e.what();
  }
  EXPECT_THROW(explain_batch(model, Matrix::Zero(2, 3), config), ValidationError);
}

TEST(Explanation, JsonRoundTrip) {
  LocalExplanation e;
  e.phi0 = 0.1;
  e.phi = Vector{{1.0 / 3.0, -2e-300}};
  e.predicted = 0.1 + 1.0 / 3.0 - 2e-300;
  e.method = ExplainMethod::kernel;
  e.n_coalitions_used = 2;
  e.seed = 0xffffffffffffffffULL;
  const auto back = explanation_from_json(nlohmann::json::parse(to_json(e).dump()));
  EXPECT_EQ(back.phi, e.phi);
  EXPECT_EQ(back.phi0, e.phi0);
  EXPECT_EQ(back.seed, e.seed);
  EXPECT_EQ(back.method, e.method);
  EXPECT_THROW(explanation_from_json(nlohmann::json::object()), Error);
}

TEST(Efficiency, HoldsAcrossMethodsAndModels) {
  std::mt19937_64 rng(41);
  const BackgroundSet bg(testing::random_matrix(12, 6, rng));
  const MLPModel mlp(6, 8, 4, 3);
  const auto inter = interaction_model(6);
  for (const PredictiveModel* m : std::initializer_list<const PredictiveModel*>{&mlp, &inter}) {
    for (auto method : {ExplainMethod::exact, ExplainMethod::kernel}) {
      ShapleyConfig config(bg, method);
      config.n_coalitions = 30;
      for (int t = 0; t < 10; ++t) {
        const auto e = explain(*m, testing::random_vector(6, rng).transpose(), config);
        EXPECT_LE(std::abs(e.efficiency_gap()), 1e-9 * std::max(1.0, std::abs(e.predicted)));
      }
    }
  }
}

}  // namespace
}  // namespace embshap

#include <gtest/gtest.h>

#include <cmath>

#include "gbs/neural.hpp"

using namespace gbs;

namespace {

// Plain-loop forward pass used as an independent oracle.
std::vector<double> reference_forward(const Mlp& net, std::vector<double> x) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight;
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double s = layers[l].bias(r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * x[static_cast<std::size_t>(c)];
      if (l + 1 < layers.size()) {
        if (net.hidden_activation() == Activation::tanh) s = std::tanh(s);
        else if (net.hidden_activation() == Activation::relu) s = s > 0.0 ? s : 0.0;
      }
      y[static_cast<std::size_t>(r)] = s;
    }
    x = std::move(y);
  }
  return x;
}

Mlp perturbed_random(std::vector<int> dims, Activation act, Rng& rng) {
  Mlp net = Mlp::random(std::move(dims), act, rng);
  auto p = net.parameters();
  for (auto& v : p) v += rng.normal(0.0, 0.1);
  net.set_parameters(p);
  return net;
}

}  // namespace

TEST(Mlp, ZeroNetworkOutputsZero) {
  const Mlp net({3, 5, 2}, Activation::tanh);
  const Eigen::VectorXd y = net.forward(Eigen::Vector3d(1.0, -2.0, 3.0));
  EXPECT_EQ(y, Eigen::VectorXd::Zero(2));
}

TEST(Mlp, IdentityLayerPassesInputThrough) {
  Mlp net({4, 4}, Activation::relu);
  net.layers()[0].weight = Eigen::MatrixXd::Identity(4, 4);
  const Eigen::Vector4d x(0.5, -1.0, 2.0, -3.5);
  EXPECT_EQ(net.forward(x), Eigen::VectorXd(x));
}

TEST(Mlp, MatchesIndependentForward) {
  Rng rng(5);
  for (auto act : {Activation::tanh, Activation::relu, Activation::identity}) {
    const Mlp net = perturbed_random({6, 9, 7, 3}, act, rng);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> x(6);
      for (auto& v : x) v = rng.normal(0.0, 1.0);
      const auto ref = reference_forward(net, x);
      const Eigen::VectorXd y = net.forward(std::span<const double>(x));
      for (int j = 0; j < 3; ++j) EXPECT_NEAR(y(j), ref[static_cast<std::size_t>(j)], 1e-10);
    }
  }
}

TEST(Mlp, BatchForwardMatchesColumns) {
  Rng rng(6);
  const Mlp net = perturbed_random({3, 4, 2}, Activation::tanh, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
  const Eigen::MatrixXd y = net.forward_batch(x);
  for (int c = 0; c < 5; ++c) EXPECT_TRUE(y.col(c).isApprox(net.forward(Eigen::VectorXd(x.col(c))), 1e-14));
}

TEST(Mlp, DimensionMismatch) {
  const Mlp net({3, 2}, Activation::tanh);
  EXPECT_THROW(net.forward(Eigen::VectorXd::Zero(4)), ConfigError);
  EXPECT_THROW(Mlp({3}, Activation::tanh), ConfigError);
  EXPECT_THROW(Mlp({3, 0, 1}, Activation::tanh), ConfigError);
  EXPECT_THROW(net.backward(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), ConfigError);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  const double h = 1e-5;
  for (auto act : {Activation::tanh, Activation::relu}) {
    Mlp net = perturbed_random({4, 8, 8, 1}, act, rng);
    Eigen::VectorXd x(4);
    for (auto& v : x) v = rng.normal(0.0, 1.0);
    const Eigen::VectorXd up = Eigen::VectorXd::Constant(1, 1.3);
    const auto g = Mlp::flatten(net.backward(x, up));
    const auto params = net.parameters();
    ASSERT_EQ(g.size(), params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto s = params;
      s[p] += h;
      net.set_parameters(s);
      const double fp = up.dot(net.forward(x));
      s[p] = params[p] - h;
      net.set_parameters(s);
      const double fm = up.dot(net.forward(x));
      const double fd = (fp - fm) / (2 * h);
      EXPECT_LE(std::abs(fd - g[p]) / std::max({std::abs(fd), std::abs(g[p]), 1e-4}), 1e-6) << to_string(act) << " parameter " << p;
    }
    net.set_parameters(params);
  }
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  Rng rng(8);
  const Mlp net = perturbed_random({3, 6, 2}, Activation::tanh, rng);
  Eigen::VectorXd x(3);
  for (auto& v : x) v = rng.normal(0.0, 1.0);
  const Eigen::Vector2d up(0.7, -1.1);
  const auto g = net.backward(x, up);
  for (int j = 0; j < 3; ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += 1e-6;
    xm(j) -= 1e-6;
    EXPECT_NEAR(g.input(j, 0), (up.dot(net.forward(xp)) - up.dot(net.forward(xm))) / 2e-6, 1e-8);
  }
}

TEST(Mlp, ZeroUpstreamGivesZeroGradients) {
  Rng rng(9);
  const Mlp net = perturbed_random({4, 8, 8, 2}, Activation::relu, rng);
  const auto g = net.backward(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Zero(2));
  EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(Mlp, LinearGradientIsOuterProduct) {
  Rng rng(10);
  const Mlp net = perturbed_random({3, 2}, Activation::identity, rng);
  const Eigen::Vector3d x(1.0, -2.0, 0.5);
  const Eigen::Vector2d up(0.3, -0.7);
  const auto g = net.backward(Eigen::VectorXd(x), Eigen::VectorXd(up));
  EXPECT_TRUE(g.weight[0].isApprox(up * x.transpose(), 1e-15));
  EXPECT_TRUE(g.bias[0].isApprox(Eigen::VectorXd(up), 1e-15));
}

TEST(Mlp, ForwardIsPure) {
  Rng rng(11);
  const Mlp net = perturbed_random({2, 4, 1}, Activation::tanh, rng);
  const Eigen::Vector2d x(0.1, 0.2);
  const Eigen::VectorXd a = net.forward(Eigen::VectorXd(x));
  (void)net.forward(Eigen::VectorXd(Eigen::Vector2d(5.0, 5.0)));
  EXPECT_EQ(net.forward(Eigen::VectorXd(x)), a);
}

TEST(Mlp, ApplyAddsScaledGradient) {
  Rng rng(12);
  Mlp net = perturbed_random({2, 3, 1}, Activation::relu, rng);
  const auto before = net.parameters();
  const auto g = net.backward(Eigen::VectorXd(Eigen::Vector2d(1.0, 2.0)), Eigen::VectorXd::Ones(1));
  net.apply(g, 0.5);
  const auto flat = Mlp::flatten(g);
  const auto after = net.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_DOUBLE_EQ(after[i], before[i] + 0.5 * flat[i]);
}

TEST(Mlp, JsonRoundTrip) {
  Rng rng(13);
  const Mlp net = perturbed_random({3, 5, 2}, Activation::tanh, rng);
  const auto j = net.to_json();
  EXPECT_EQ(j["layer_dims"], nlohmann::json({3, 5, 2}));
  EXPECT_EQ(j["hidden_activation"], "tanh");
  const Mlp back = Mlp::from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.parameters(), net.parameters());
  // Weights are stored row-major.
  EXPECT_EQ(j["weights"][0][1].get<double>(), net.layers()[0].weight(0, 1));
}

TEST(Mlp, JsonRejectsInconsistentShapes) {
  auto j = Mlp({2, 3, 1}, Activation::relu).to_json();
  j["layer_dims"] = {2, 4, 1};
  EXPECT_ANY_THROW(Mlp::from_json(j));
}

TEST(Activation, Parsing) {
  EXPECT_EQ(activation_from_string("relu"), Activation::relu);
  EXPECT_EQ(activation_from_string("tanh"), Activation::tanh);
  EXPECT_THROW(activation_from_string("gelu"), ConfigError);
}

TEST(FeatureScaler, Standardises) {
  const auto s = FeatureScaler::fit({{1.0, 5.0}, {3.0, 5.0}});
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.scale[0], 1.0);
  EXPECT_DOUBLE_EQ(s.scale[1], 1.0);  // constant column keeps unit scale
  const std::vector<double> x{3.0, 6.0};
  const auto z = s.apply(x);
  EXPECT_DOUBLE_EQ(z(0), 1.0);
  EXPECT_DOUBLE_EQ(z(1), 1.0);
  EXPECT_EQ(FeatureScaler{}.apply(x), Eigen::VectorXd(Eigen::Vector2d(3.0, 6.0)));
  const auto back = FeatureScaler::from_json(s.to_json());
  EXPECT_EQ(back.mean, s.mean);
}

TEST(FitLogisticChoice, SeparableData) {
  Rng rng(14);
  std::vector<LabeledFeature> data;
  for (int i = 0; i < 400; ++i) {
    Eigen::VectorXd x(2);
    x << rng.normal(0.0, 1.0), rng.normal(0.0, 1.0);
    if (std::abs(x(0) + x(1)) < 0.2) continue;
    data.push_back({x, x(0) + x(1) > 0 ? 1 : 0});
  }
  FitConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 50;
  Mlp init = Mlp::random({2, 8, 1}, Activation::relu, rng, 2.0);
  const auto fit = fit_logistic_choice(init, data, cfg);
  int correct = 0;
  for (const auto& d : data) correct += (fit.net.forward(d.x)(0) > 0.0) == (d.label == 1);
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(data.size()), 0.95);
}

TEST(FitLogisticChoice, ConstantLabelsDrivePredictionUp) {
  std::vector<LabeledFeature> data(10, LabeledFeature{Eigen::VectorXd::Ones(1), 1});
  FitConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.full_batch = true;
  Mlp net({1, 1}, Activation::identity);
  double last = sigmoid(net.forward(Eigen::VectorXd::Ones(1))(0));
  for (int round = 0; round < 20; ++round) {
    cfg.epochs = 5;
    net = fit_logistic_choice(net, data, cfg).net;
    const double p = sigmoid(net.forward(Eigen::VectorXd::Ones(1))(0));
    EXPECT_GT(p, last);
    last = p;
  }
  EXPECT_GT(last, 0.95);
}

TEST(FitLogisticChoice, FullBatchLossNonIncreasing) {
  Rng rng(15);
  std::vector<LabeledFeature> data;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd x(3);
    for (auto& v : x) v = rng.normal(0.0, 1.0);
    data.push_back({x, rng.bernoulli(sigmoid(x(0) - x(2))) ? 1 : 0});
  }
  FitConfig cfg;
  cfg.full_batch = true;
  cfg.learning_rate = 0.05;
  cfg.epochs = 100;
  const auto fit = fit_logistic_choice(Mlp::random({3, 16, 16, 1}, Activation::relu, rng, 2.0), data, cfg);
  for (std::size_t e = 1; e < fit.epoch_loss.size(); ++e) EXPECT_LE(fit.epoch_loss[e], fit.epoch_loss[e - 1] + 1e-12);
}

TEST(FitLogisticChoice, DeterministicGivenSeed) {
  Rng rng(16);
  std::vector<LabeledFeature> data;
  for (int i = 0; i < 64; ++i) data.push_back({Eigen::VectorXd::Constant(2, rng.normal(0.0, 1.0)), i % 2});
  FitConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 3;
  const Mlp init = Mlp::random({2, 4, 1}, Activation::relu, rng, 2.0);
  EXPECT_EQ(fit_logistic_choice(init, data, cfg).net.parameters(), fit_logistic_choice(init, data, cfg).net.parameters());
}

TEST(FitLogisticChoice, Errors) {
  FitConfig cfg;
  EXPECT_THROW(fit_logistic_choice(Mlp({1, 1}, Activation::identity), {}, cfg), ValidationError);
  EXPECT_THROW(fit_logistic_choice(Mlp({1, 2}, Activation::identity), {{Eigen::VectorXd::Ones(1), 1}}, cfg), ConfigError);
  cfg.learning_rate = 1e300;
  cfg.epochs = 10;
  std::vector<LabeledFeature> data{{Eigen::VectorXd::Constant(1, 1e10), 1}, {Eigen::VectorXd::Constant(1, 2e10), 1}};
  EXPECT_THROW(fit_logistic_choice(Mlp({1, 1}, Activation::identity), data, cfg), DivergenceError);
}

#include <gtest/gtest.h>

#include <cmath>

#include "gbs/baselines.hpp"

using namespace gbs;

namespace {

Population make_population(std::size_t k, std::size_t n, UtilityType t, std::uint64_t seed) {
  PopulationSpec s;
  s.k = k;
  s.size = n;
  s.utility_type = t;
  s.seed = seed;
  return generate_population(s);
}

// Two opposite linear clusters with covariates exp(W_i).
Population two_cluster_population(std::size_t k, std::size_t n, std::uint64_t seed) {
  const auto mix = MixtureSpec::symmetric(k);
  Population pop;
  pop.params.spec.k = k;
  pop.params.spec.size = n;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    RespondentModel r;
    r.id = i;
    const auto& mu = i % 2 ? mix.mu1 : mix.mu2;
    for (std::size_t j = 0; j < k; ++j) {
      r.w.push_back(rng.normal(mu[j], 1.0));
      r.x.push_back(std::exp(r.w.back()));
    }
    pop.respondents.push_back(std::move(r));
  }
  return pop;
}

PairedChoiceDataset single_record(ProductProfile z1, ProductProfile z2, Choice y) {
  PairedChoiceDataset d;
  d.k = z1.size();
  d.records.push_back({0, std::move(z1), std::move(z2), y});
  return d;
}

}  // namespace

TEST(RandomPairs, BitFrequencyIsHalf) {
  const auto pop = make_population(8, 200, UtilityType::linear, 1);
  Rng rng(2);
  const auto data = collect_random_pair_data(pop, 10, rng);
  ASSERT_EQ(data.records.size(), 2000u);
  double ones = 0, n = 0;
  for (const auto& r : data.records)
    for (std::size_t j = 0; j < 8; ++j) {
      ones += r.z1.bits[j] + r.z2.bits[j];
      n += 2;
    }
  EXPECT_LE(std::abs(ones / n - 0.5), 4.0 * std::sqrt(0.25 / n));
}

TEST(Logistic, RecoversPopulationSigns) {
  const auto pop = make_population(6, 2000, UtilityType::linear, 3);
  Rng rng(4);
  const auto fit = fit_logistic(collect_random_pair_data(pop, 10, rng));
  EXPECT_TRUE(fit.converged);
  std::vector<double> mean(6, 0.0);
  for (const auto& r : pop.respondents)
    for (std::size_t j = 0; j < 6; ++j) mean[j] += r.w[j] / 2000.0;
  int checked = 0;
  for (std::size_t j = 0; j < 6; ++j)
    if (std::abs(mean[j]) > 0.5) {
      EXPECT_EQ(fit.w(static_cast<Eigen::Index>(j)) > 0, mean[j] > 0) << j;
      ++checked;
    }
  EXPECT_GT(checked, 0);
}

TEST(Logistic, SingleRecordIsFiniteAndOrdered) {
  const ProductProfile z1({1, 0, 1}), z2({0, 1, 1});
  const auto fit = fit_logistic(single_record(z1, z2, Choice::first));
  EXPECT_TRUE(fit.w.allFinite());
  const Eigen::Vector3d diff(1.0, -1.0, 0.0);
  EXPECT_GT(fit.w.dot(diff), 0.0);
}

TEST(Logistic, IdenticalProfilesGiveZero) {
  PairedChoiceDataset d;
  d.k = 3;
  for (int i = 0; i < 5; ++i) d.records.push_back({0, ProductProfile({1, 0, 1}), ProductProfile({1, 0, 1}), i % 2 ? Choice::first : Choice::second});
  const auto fit = fit_logistic(d);
  EXPECT_EQ(fit.w, Eigen::VectorXd::Zero(3));
  EXPECT_EQ(fit.product, ProductProfile({0, 0, 0}));
}

TEST(Logistic, EmptyDataRejected) {
  PairedChoiceDataset d;
  d.k = 2;
  EXPECT_THROW(fit_logistic(d), ValidationError);
  d.records.push_back({0, ProductProfile({1}), ProductProfile({0}), Choice::first});
  EXPECT_THROW(fit_logistic(d), ValidationError);
}

TEST(Logistic, DependsOnlyOnProfileDifference) {
  const auto pop = make_population(5, 50, UtilityType::linear, 5);
  Rng rng(6);
  auto a = collect_random_pair_data(pop, 4, rng);
  auto b = a;
  for (auto& r : b.records)
    for (std::size_t j = 0; j < 5; ++j)
      if (r.z1.bits[j] == r.z2.bits[j]) r.z1.bits[j] = r.z2.bits[j] = 1 - r.z1.bits[j];
  EXPECT_TRUE(fit_logistic(a).w.isApprox(fit_logistic(b).w, 1e-12));
  EXPECT_TRUE(fit_hb_map(a).m.isApprox(fit_hb_map(b).m, 1e-10));
}

TEST(Hb, NoRecordsGivesPriorMode) {
  PairedChoiceDataset d;
  d.k = 4;
  const auto fit = fit_hb_map(d);
  EXPECT_EQ(fit.m, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(fit.product, ProductProfile(4));
}

TEST(Hb, ConsistentChoicesFavourCoordinate) {
  PairedChoiceDataset d;
  d.k = 3;
  for (int i = 0; i < 30; ++i) d.records.push_back({7, ProductProfile({0, 1, 0}), ProductProfile({0, 0, 0}), Choice::first});
  const auto fit = fit_hb_map(d);
  EXPECT_GT(fit.m(1), 0.0);
  EXPECT_GT(fit.w.at(7)(1), fit.m(1));
}

TEST(Hb, StationaryAtReturnedPoint) {
  for (auto t : {UtilityType::linear, UtilityType::pairwise}) {
    const auto pop = make_population(10, 60, t, 7);
    Rng rng(8);
    const auto fit = fit_hb_map(collect_random_pair_data(pop, 10, rng));
    EXPECT_TRUE(fit.converged);
    EXPECT_FALSE(fit.warning);
    EXPECT_LE(fit.gradient_norm, 1e-4);
  }
}

TEST(Hb, IterationCapSetsWarning) {
  const auto pop = make_population(6, 30, UtilityType::linear, 9);
  Rng rng(10);
  HbConfig cfg;
  cfg.max_iterations = 1;
  const auto fit = fit_hb_map(collect_random_pair_data(pop, 10, rng), cfg);
  EXPECT_TRUE(fit.warning);
  EXPECT_TRUE(fit.m.allFinite());
}

TEST(Hb, TightPriorMatchesPooledLogistic) {
  const auto pop = make_population(8, 300, UtilityType::linear, 11);
  Rng rng(12);
  const auto data = collect_random_pair_data(pop, 10, rng);
  HbConfig cfg;
  cfg.prior_variance_w = 1e-4;
  const auto hb = fit_hb_map(data, cfg);
  const auto lr = fit_logistic(data);
  for (Eigen::Index j = 0; j < 8; ++j)
    if (std::abs(lr.w(j)) > 0.5) EXPECT_EQ(hb.m(j) > 0, lr.w(j) > 0) << j;
}

TEST(Hb, InvalidPrior) {
  PairedChoiceDataset d;
  d.k = 2;
  HbConfig cfg;
  cfg.prior_variance_m = 0.0;
  EXPECT_THROW(fit_hb_map(d, cfg), ConfigError);
}

TEST(NnUtility, RecoversLinearOptimumAtKTwo) {
  Population pop;
  pop.params.spec.k = 2;
  for (std::size_t i = 0; i < 500; ++i) {
    RespondentModel r;
    r.id = i;
    r.w = {1.0, -1.0};
    pop.respondents.push_back(r);
  }
  Rng rng(13);
  NnConfig cfg;
  cfg.fit.epochs = 30;
  const auto fit = fit_nn_utility(collect_random_pair_data(pop, 10, rng), cfg);
  EXPECT_EQ(fit.product, ProductProfile({1, 0}));
}

TEST(NnUtility, ZeroOutputLayerGivesAllZeros) {
  Mlp net = make_fitted_net(4, 8, 1, 1);
  net.layers().back().weight.setZero();
  EXPECT_EQ(argmax_network(net, 4), ProductProfile(4));
}

TEST(NnUtility, ArgmaxMatchesEnumeration) {
  const Mlp net = make_fitted_net(6, 16, 1, 2);
  std::size_t best = 0;
  double best_v = -INFINITY;
  for (std::uint64_t idx = 0; idx < 64; ++idx) {
    const auto z = ProductProfile::from_index(idx, 6);
    Eigen::VectorXd x(6);
    for (int j = 0; j < 6; ++j) x(j) = z.bits[static_cast<std::size_t>(j)];
    const double v = net.forward(x)(0);
    if (v > best_v) {
      best_v = v;
      best = idx;
    }
  }
  EXPECT_EQ(argmax_network(net, 6), ProductProfile::from_index(best, 6));
}

TEST(NnUtility, RefusesLargeK) {
  PairedChoiceDataset d;
  d.k = 21;
  d.records.push_back({0, ProductProfile(21), ProductProfile(21), Choice::first});
  try {
    fit_nn_utility(d);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("enumeration infeasible"), std::string::npos);
  }
}

TEST(NnUtility, FullBatchLossNonIncreasing) {
  const auto pop = make_population(5, 40, UtilityType::linear, 14);
  Rng rng(15);
  NnConfig cfg;
  cfg.fit.full_batch = true;
  cfg.fit.epochs = 60;
  cfg.fit.learning_rate = 0.05;
  const auto fit = fit_nn_utility(collect_random_pair_data(pop, 10, rng), cfg);
  for (std::size_t e = 1; e < fit.epoch_loss.size(); ++e) EXPECT_LE(fit.epoch_loss[e], fit.epoch_loss[e - 1] + 1e-12);
}

TEST(NnInd, ZeroNetworkGivesAllZeros) {
  NnIndFit fit{Mlp({3, 4, 3}, Activation::relu), {}, {}};
  EXPECT_EQ(fit.policy(std::vector<double>{1.0, 2.0, 3.0}), ProductProfile(3));
  EXPECT_EQ(fit.policy(std::vector<double>{-5.0, 0.0, 9.0}), ProductProfile(3));
}

TEST(NnInd, MissingCovariateNamesRespondent) {
  PairedChoiceDataset d;
  d.k = 2;
  d.records.push_back({0, ProductProfile({1, 0}), ProductProfile({0, 1}), Choice::first});
  d.records.push_back({42, ProductProfile({1, 0}), ProductProfile({0, 1}), Choice::first});
  d.covariates[0] = {1.0, 2.0};
  try {
    fit_nn_ind(d);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

TEST(NnInd, SeparatesOppositeClusters) {
  const std::size_t k = 6;
  const auto pop = two_cluster_population(k, 400, 16);
  Rng rng(17);
  const auto fit = fit_nn_ind(collect_random_pair_data(pop, 10, rng));
  const auto mix = MixtureSpec::symmetric(k);
  std::vector<double> x1, x2;
  for (std::size_t j = 0; j < k; ++j) {
    x1.push_back(std::exp(mix.mu1[j]));
    x2.push_back(std::exp(mix.mu2[j]));
  }
  const auto p1 = fit.policy(x1), p2 = fit.policy(x2);
  int opposite = 0;
  for (std::size_t j = 0; j < k; ++j) opposite += p1.bits[j] != p2.bits[j];
  EXPECT_GE(opposite, 5);

  // Fresh respondents: agreement with sign(W_i) where |W_ik| > 1.
  const auto test = two_cluster_population(k, 200, 18);
  double agree = 0, total = 0;
  for (const auto& r : test.respondents) {
    const auto p = fit.policy(r.x);
    for (std::size_t j = 0; j < k; ++j)
      if (std::abs(r.w[j]) > 1.0) {
        agree += p.bits[j] == (r.w[j] > 0 ? 1 : 0);
        ++total;
      }
  }
  EXPECT_GE(agree / total, 0.8);
}

TEST(NnInd, FullBatchLossNonIncreasing) {
  const auto pop = two_cluster_population(4, 40, 19);
  Rng rng(20);
  NnConfig cfg;
  cfg.fit.full_batch = true;
  cfg.fit.epochs = 60;
  cfg.fit.learning_rate = 0.05;
  const auto fit = fit_nn_ind(collect_random_pair_data(pop, 10, rng), cfg);
  for (std::size_t e = 1; e < fit.epoch_loss.size(); ++e) EXPECT_LE(fit.epoch_loss[e], fit.epoch_loss[e - 1] + 1e-12);
}

TEST(Baselines, ProductsAreValidProfiles) {
  const auto pop = make_population(7, 50, UtilityType::pairwise, 21);
  Rng rng(22);
  const auto data = collect_random_pair_data(pop, 10, rng);
  NnConfig cfg;
  cfg.fit.epochs = 5;
  for (const auto& p : {fit_logistic(data).product, fit_hb_map(data).product, fit_nn_utility(data, cfg).product}) {
    EXPECT_EQ(p.size(), 7u);
    for (auto b : p.bits) EXPECT_LE(b, 1);
  }
}

TEST(Baselines, JsonMetadata) {
  const auto pop = make_population(4, 20, UtilityType::linear, 23);
  Rng rng(24);
  const auto data = collect_random_pair_data(pop, 10, rng);
  const auto lj = fit_logistic(data).to_json();
  EXPECT_EQ(lj["method"], "logistic");
  EXPECT_TRUE(lj.contains("iterations"));
  const auto hj = fit_hb_map(data).to_json();
  EXPECT_EQ(hj["m_hat"].size(), 4u);
  EXPECT_EQ(HbConfig{}.to_json()["optimizer"], "newton-schur");
}

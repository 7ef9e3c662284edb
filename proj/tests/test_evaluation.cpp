#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gbs/evaluation.hpp"

using namespace gbs;

namespace {

Population linear_population(std::vector<std::vector<double>> ws) {
  Population pop;
  pop.params.spec.k = ws.front().size();
  pop.params.spec.size = ws.size();
  pop.params.spec.utility_type = UtilityType::linear;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    RespondentModel r;
    r.id = i;
    r.w = std::move(ws[i]);
    pop.respondents.push_back(std::move(r));
  }
  return pop;
}

Population make_population(std::size_t k, std::size_t n, UtilityType t, std::uint64_t seed) {
  PopulationSpec s;
  s.k = k;
  s.size = n;
  s.utility_type = t;
  s.seed = seed;
  return generate_population(s);
}

}  // namespace

TEST(ExactGradient, FlatObjectiveHasZeroGradient) {
  const auto pop = linear_population({{0.0}, {0.0}});
  const auto g = exact_gradient(PolicyLogits{0.3}, pop, ProductProfile({0}));
  EXPECT_EQ(g[0], 0.0);
}

TEST(ExactGradient, TwoPointSign) {
  for (double c : {-2.0, -0.5, 0.7, 3.0})
    for (int z0 : {0, 1}) {
      const auto pop = linear_population({{c}});
      const auto g = exact_gradient(PolicyLogits{0.4}, pop, ProductProfile({z0}));
      const double v0 = z0 ? c : 0.0;
      const double expected_sign = sigmoid(c - v0) - sigmoid(0.0 - v0);
      EXPECT_EQ(std::signbit(g[0]), std::signbit(expected_sign)) << c << " " << z0;
      EXPECT_NE(g[0], 0.0);
    }
}

TEST(ExactGradient, ClosedFormSingleCoordinate) {
  const auto pop = linear_population({{1.2}, {-0.4}});
  const double phi = -0.3;
  double diff = 0.0;
  for (const auto& r : pop.respondents) diff += (sigmoid(r.w[0]) - 0.5) / 2.0;
  const auto g = exact_gradient(PolicyLogits{phi}, pop, ProductProfile({0}));
  EXPECT_NEAR(g[0], sigmoid(phi) * sigmoid(-phi) * diff, 1e-15);
}

TEST(ExactGradient, MatchesFiniteDifferences) {
  Rng rng(3);
  for (auto t : {UtilityType::linear, UtilityType::pairwise, UtilityType::network}) {
    const auto pop = make_population(4, 7, t, 11);
    const auto z0 = ProductProfile({0, 1, 0, 1});
    std::vector<double> phi(4);
    for (auto& p : phi) p = rng.normal(0.0, 1.0);
    const auto table = win_probability_table(pop, z0);
    const auto g = exact_gradient(PolicyLogits(phi), table);
    for (std::size_t j = 0; j < 4; ++j) {
      auto a = phi, b = phi;
      a[j] += 1e-6;
      b[j] -= 1e-6;
      const double fd = (exact_objective(PolicyLogits(a), table) - exact_objective(PolicyLogits(b), table)) / 2e-6;
      EXPECT_NEAR(g[j], fd, 1e-8);
    }
  }
}

TEST(ExactGradient, ObjectiveIsProbabilityMixture) {
  const auto pop = make_population(3, 5, UtilityType::pairwise, 2);
  const auto z0 = ProductProfile({1, 0, 1});
  const auto table = win_probability_table(pop, z0);
  // Near-deterministic policy picks out one table entry.
  EXPECT_NEAR(exact_objective(PolicyLogits{40.0, -40.0, 40.0}, table), table[0b101], 1e-12);
  double mass = 0.0;
  const std::vector<double> pi{0.2, 0.7, 0.4};
  for (std::uint64_t idx = 0; idx < 8; ++idx) mass += profile_mass(idx, pi);
  EXPECT_NEAR(mass, 1.0, 1e-15);
}

TEST(ExactGradient, EnumerationGuard) {
  const auto pop = make_population(21, 2, UtilityType::linear, 1);
  EXPECT_THROW(exact_gradient(PolicyLogits(std::vector<double>(21, 0.0)), pop, ProductProfile(21)), InfeasibleError);
  EXPECT_THROW(product_rank(ProductProfile(21), pop), InfeasibleError);
}

TEST(TestUtility, AllZeroProductIsZeroUnderLinear) {
  const auto pop = make_population(6, 50, UtilityType::linear, 5);
  EXPECT_EQ(test_utility(ProductProfile(6), pop), 0.0);
}

TEST(TestUtility, DirectSummationOracle) {
  for (auto t : {UtilityType::linear, UtilityType::pairwise}) {
    const auto pop = make_population(8, 40, t, 6);
    std::vector<double> mean(8, 0.0);
    for (const auto& r : pop.respondents)
      for (std::size_t j = 0; j < 8; ++j) mean[j] += r.w[j] / 40.0;
    ProductProfile z(8);
    for (std::size_t j = 0; j < 8; ++j) z.bits[j] = mean[j] > 0 ? 1 : 0;
    double direct = 0.0;
    for (const auto& r : pop.respondents) direct += representative_utility(r, z) / 40.0;
    EXPECT_NEAR(test_utility(z, pop), direct, 1e-12);
  }
}

TEST(TestUtility, MeanUtilityTableMatchesPerRespondentAverage) {
  for (auto t : {UtilityType::linear, UtilityType::pairwise, UtilityType::network}) {
    const auto pop = make_population(5, 12, t, 7);
    const auto table = MeanUtility(pop).table();
    for (std::uint64_t idx = 0; idx < 32; ++idx) {
      double direct = 0.0;
      for (const auto& r : pop.respondents) direct += representative_utility(r, ProductProfile::from_index(idx, 5)) / 12.0;
      EXPECT_NEAR(table[idx], direct, 1e-12);
    }
  }
}

TEST(TestUtility, PolicyAverage) {
  const auto pop = linear_population({{1.0, -1.0}, {-1.0, 1.0}});
  const auto util = test_utility(
      [](const RespondentModel& r) { return ProductProfile({r.w[0] > 0 ? 1 : 0, r.w[1] > 0 ? 1 : 0}); }, pop);
  EXPECT_DOUBLE_EQ(util, 1.0);
  EXPECT_DOUBLE_EQ(test_utility(ProductProfile({1, 0}), pop), 0.0);
}

TEST(ProductRank, HandEnumeration) {
  const auto pop = linear_population({{1.0, -1.0}});
  EXPECT_EQ(product_rank(ProductProfile({1, 0}), pop), 1u);
  EXPECT_EQ(product_rank(ProductProfile({0, 0}), pop), 2u);
  EXPECT_EQ(product_rank(ProductProfile({1, 1}), pop), 2u);  // tie shares the better rank
  EXPECT_EQ(product_rank(ProductProfile({0, 1}), pop), 4u);
}

TEST(ProductRank, ArgmaxIsFirstAndWorstIsLast) {
  const auto pop = make_population(6, 30, UtilityType::pairwise, 8);
  const auto table = MeanUtility(pop).table();
  const auto best = argmax_profile(table, 6);
  EXPECT_EQ(product_rank(best, table), 1u);
  const auto worst = std::min_element(table.begin(), table.end()) - table.begin();
  EXPECT_EQ(product_rank(ProductProfile::from_index(static_cast<std::uint64_t>(worst), 6), table), 64u);
}

TEST(ArgmaxProfile, TiesGoToSmallestProfile) {
  const std::vector<double> table{0.0, 2.0, 2.0, 1.0};
  EXPECT_EQ(argmax_profile(table, 2), ProductProfile({0, 1}));
  EXPECT_EQ(argmax_profile(std::vector<double>(8, 0.0), 3), ProductProfile({0, 0, 0}));
}

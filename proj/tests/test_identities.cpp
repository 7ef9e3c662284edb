#include <gtest/gtest.h>

#include "gbs/identities.hpp"

using namespace gbs;

namespace {

VerifyOptions reduced() {
  VerifyOptions o;
  o.mc_draws = 200'000;
  o.differ_draws = 200'000;
  o.identity_triples = 200;
  return o;
}

}  // namespace

TEST(Identities, SuitePassesWithReducedDraws) {
  const auto results = run_identity_suite(reduced());
  EXPECT_EQ(results.size(), 7u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.line();
  EXPECT_TRUE(all_passed(results));
}

TEST(Identities, SignFlippedEstimatorIsCaught) {
  const PairedGradientFn flipped = [](Choice y, std::span<const double> u) {
    auto g = gbs_gradient(y, u, u.size()).g;
    for (auto& v : g) v = -v;
    return g;
  };
  const auto r = check_paired_unbiasedness(reduced(), flipped);
  EXPECT_FALSE(r.passed) << r.line();
  EXPECT_FALSE(all_passed(run_identity_suite(reduced(), flipped)));
}

TEST(Identities, ExactChecks) {
  const auto o = reduced();
  EXPECT_LE(check_conditional_choice_law(o).observed, 1e-12);
  EXPECT_LE(check_marginalization_identity(o).observed, 1e-12);
  EXPECT_LE(check_backward_fd(o).observed, 1e-6);
  EXPECT_LE(check_exact_gradient_fd(o).observed, 1e-6);
}

TEST(CheckResult, LineAndJson) {
  CheckResult r{"x", true, 0.5, 1.0, "d"};
  EXPECT_EQ(r.line().rfind("PASS", 0), 0u);
  EXPECT_EQ(r.to_json()["tolerance"], 1.0);
  r.passed = false;
  EXPECT_EQ(r.line().rfind("FAIL", 0), 0u);
}

#include <gtest/gtest.h>

#include <sstream>

#include "gbs/benchmark.hpp"

using namespace gbs;

namespace {

BenchmarkConfig tiny() {
  BenchmarkConfig c;
  c.methods = {"gbs"};
  c.utility_types = {UtilityType::linear};
  c.k_values = {4};
  c.budgets = {10};
  c.trials = 1;
  c.test_size = 50;
  c.seed = 7;
  return c;
}

std::string csv(const BenchmarkResult& r, bool runtime) {
  std::ostringstream os;
  write_csv(os, r.reports, runtime);
  return os.str();
}

}  // namespace

TEST(Benchmark, OneCellOneRow) {
  const auto res = run_benchmark(tiny());
  ASSERT_EQ(res.reports.size(), 1u);
  const auto text = csv(res, true);
  EXPECT_EQ(text.rfind("method,utility_type,K,n_respondents,trial,test_utility,rank,runtime_ms,seed,status\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  const auto& r = res.reports[0];
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.test_utility.has_value());
  ASSERT_TRUE(r.rank.has_value());
  EXPECT_GE(*r.rank, 1u);
  EXPECT_LE(*r.rank, 16u);
}

TEST(Benchmark, NoRuntimeIsByteIdentical) {
  auto c = tiny();
  c.methods = {"gbs", "logistic", "hb"};
  c.budgets = {0, 10};
  c.record_runtime = false;
  EXPECT_EQ(csv(run_benchmark(c), false), csv(run_benchmark(c), false));
}

TEST(Benchmark, ResultsIndependentOfJobs) {
  auto c = tiny();
  c.methods = {"gbs", "logistic", "hb", "nn"};
  c.nn.fit.epochs = 3;
  c.utility_types = {UtilityType::linear, UtilityType::pairwise};
  c.trials = 2;
  c.record_runtime = false;
  const auto a = csv(run_benchmark(c), false);
  c.jobs = 4;
  EXPECT_EQ(a, csv(run_benchmark(c), false));
}

TEST(Benchmark, UnknownMethodRejected) {
  auto c = tiny();
  c.methods = {"gbs", "magic"};
  EXPECT_THROW(run_benchmark(c), ConfigError);
  c.methods = {"nn-ind"};
  EXPECT_THROW(c.validate(), ConfigError);
  c.study = Study::personalized;
  EXPECT_THROW(c.validate(), ConfigError);  // linear type
  c.utility_types = {UtilityType::pairwise};
  EXPECT_NO_THROW(c.validate());
}

TEST(Benchmark, InfeasibleMethodIsRowFailure) {
  auto c = tiny();
  c.methods = {"gbs", "nn"};
  c.k_values = {21};
  const auto res = run_benchmark(c);
  ASSERT_EQ(res.reports.size(), 2u);
  EXPECT_TRUE(res.reports[0].ok());
  EXPECT_FALSE(res.reports[0].rank.has_value());
  EXPECT_FALSE(res.reports[1].ok());
  EXPECT_NE(res.reports[1].status.find("enumeration infeasible"), std::string::npos);
  EXPECT_FALSE(res.reports[1].test_utility.has_value());
  const auto s = summarize(res.reports);
  EXPECT_EQ(s.at(CellKey{"nn", UtilityType::linear, 21, 10}).failures, 1u);
}

TEST(Benchmark, ZeroBudgetGivesAllZeroBaselines) {
  auto c = tiny();
  c.methods = {"logistic", "hb"};
  c.budgets = {0};
  for (const auto& r : run_benchmark(c).reports) {
    EXPECT_EQ(r.product, "0000");
    EXPECT_EQ(*r.test_utility, 0.0);
  }
}

TEST(Benchmark, PersonalizedStudyRuns) {
  BenchmarkConfig c = BenchmarkConfig::from_json({{"study", "personalized"}, {"K", {4}}, {"budgets", {20}}, {"trials", 1}, {"test_size", 40}});
  EXPECT_EQ(c.methods, (std::vector<std::string>{"gbs", "logistic", "nn-ind"}));
  c.nn.fit.epochs = 5;
  const auto res = run_benchmark(c);
  ASSERT_EQ(res.reports.size(), 3u);
  for (const auto& r : res.reports) {
    EXPECT_TRUE(r.ok()) << r.method << ": " << r.status;
    EXPECT_FALSE(r.rank.has_value());
  }
}

TEST(Benchmark, ConfigJsonRoundTrip) {
  auto c = tiny();
  c.budgets = {3, 9};
  const auto back = BenchmarkConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Summary, LinearInterpolationQuantiles) {
  const auto s = summarize(std::vector<double>{4.0, 1.0, 3.0, 2.0});
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.q1, 1.75);
  EXPECT_DOUBLE_EQ(s.q3, 3.25);
  const auto one = summarize(std::vector<double>{5.0});
  EXPECT_EQ(one.median, 5.0);
  EXPECT_EQ(one.q1, 5.0);
  EXPECT_EQ(summarize(std::vector<double>{}).count, 0u);
}

TEST(Summary, GroupsByCell) {
  std::vector<EvaluationReport> rows;
  for (std::size_t t = 0; t < 3; ++t) {
    EvaluationReport r;
    r.method = "gbs";
    r.k = 5;
    r.n_respondents = 10;
    r.trial = t;
    r.test_utility = static_cast<double>(t);
    r.rank = t + 1;
    rows.push_back(r);
  }
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.begin()->second.utility.median, 1.0);
  EXPECT_EQ(s.begin()->second.rank.median, 2.0);
  const auto j = to_json(BenchmarkResult{tiny(), rows});
  EXPECT_EQ(j["summary"][0]["rank_median"], 2.0);
}

#pragma once

// Experiment runner: trials x utility types x K x respondent budgets, every
// method evaluated on a fresh hold-out population from the same trial.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gbs/baselines.hpp"
#include "gbs/evaluation.hpp"
#include "gbs/policy.hpp"
#include "gbs/respondent.hpp"
#include "gbs/single_product.hpp"

namespace gbs {

enum class Study { single, personalized };

struct BenchmarkConfig {
  Study study = Study::single;
  std::vector<std::string> methods{"gbs", "logistic", "hb", "nn"};
  std::vector<UtilityType> utility_types{UtilityType::linear, UtilityType::pairwise, UtilityType::network};
  std::vector<std::size_t> k_values{10};
  std::vector<std::size_t> budgets{10, 30, 70, 100};
  std::size_t trials = 10;
  std::uint64_t seed = 2024;
  std::size_t questions_per_respondent = 10;
  std::size_t test_size = 1000;
  double eta = 0.3;
  double policy_eta = 0.003;
  std::size_t jobs = 1;
  bool record_runtime = true;
  NnConfig nn{};
  HbConfig hb{};
  LogisticConfig logistic{};

  static const std::vector<std::string>& known_methods(Study s) {
    static const std::vector<std::string> single{"gbs", "logistic", "hb", "nn"};
    static const std::vector<std::string> personalized{"gbs", "logistic", "nn-ind"};
    return s == Study::single ? single : personalized;
  }

  void validate() const {
    if (methods.empty()) throw ConfigError("benchmark: no methods");
    for (const auto& m : methods) {
      const auto& known = known_methods(study);
      if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("benchmark: unknown method '" + m + "'");
    }
    if (utility_types.empty() || k_values.empty() || budgets.empty()) throw ConfigError("benchmark: empty grid");
    if (study == Study::personalized)
      for (auto t : utility_types)
        if (t != UtilityType::pairwise) throw ConfigError("benchmark: the personalized study uses the pairwise utility type only");
    for (auto k : k_values)
      if (k < 1) throw ConfigError("benchmark: K must be at least 1");
    if (trials < 1) throw ConfigError("benchmark: trials must be at least 1");
    if (questions_per_respondent < 1) throw ConfigError("benchmark: n_q must be at least 1");
    if (test_size < 1) throw ConfigError("benchmark: test_size must be at least 1");
    if (!(eta > 0.0) || !(policy_eta > 0.0)) throw ConfigError("benchmark: stepsizes must be positive");
  }

  nlohmann::json to_json() const {
    std::vector<int> types;
    for (auto t : utility_types) types.push_back(static_cast<int>(t));
    return {{"study", study == Study::single ? "single" : "personalized"},
            {"methods", methods},
            {"utility_types", types},
            {"K", k_values},
            {"budgets", budgets},
            {"trials", trials},
            {"seed", seed},
            {"n_q", questions_per_respondent},
            {"test_size", test_size},
            {"eta", eta},
            {"policy_eta", policy_eta},
            {"jobs", jobs},
            {"record_runtime", record_runtime},
            {"nn", nn.to_json()},
            {"hb", hb.to_json()},
            {"logistic", {{"l2", logistic.l2}, {"max_iterations", logistic.max_iterations}, {"optimizer", "newton"}}}};
  }

  // Missing keys keep their defaults.
  static BenchmarkConfig from_json(const nlohmann::json& j) {
    BenchmarkConfig c;
    if (j.contains("study")) {
      const auto s = j["study"].get<std::string>();
      if (s == "single") c.study = Study::single;
      else if (s == "personalized") c.study = Study::personalized;
      else throw ConfigError("benchmark: unknown study '" + s + "'");
      if (c.study == Study::personalized) {
        c.methods = known_methods(Study::personalized);
        c.utility_types = {UtilityType::pairwise};
        c.budgets = {100, 300, 500};
      }
    }
    if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
    if (j.contains("utility_types")) {
      c.utility_types.clear();
      for (const auto& t : j["utility_types"])
        c.utility_types.push_back(utility_type_from_string(t.is_string() ? t.get<std::string>() : std::to_string(t.get<int>())));
    }
    if (j.contains("K")) c.k_values = j["K"].get<std::vector<std::size_t>>();
    if (j.contains("budgets")) c.budgets = j["budgets"].get<std::vector<std::size_t>>();
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    c.questions_per_respondent = j.value("n_q", c.questions_per_respondent);
    c.test_size = j.value("test_size", c.test_size);
    c.eta = j.value("eta", c.eta);
    c.policy_eta = j.value("policy_eta", c.policy_eta);
    c.jobs = j.value("jobs", c.jobs);
    c.record_runtime = j.value("record_runtime", c.record_runtime);
    if (j.contains("nn")) {
      const auto& n = j["nn"];
      c.nn.hidden = n.value("hidden", c.nn.hidden);
      c.nn.fit.learning_rate = n.value("learning_rate", c.nn.fit.learning_rate);
      c.nn.fit.batch_size = n.value("batch_size", c.nn.fit.batch_size);
      c.nn.fit.epochs = n.value("epochs", c.nn.fit.epochs);
    }
    if (j.contains("hb")) {
      c.hb.prior_variance_m = j["hb"].value("prior_variance_m", c.hb.prior_variance_m);
      c.hb.prior_variance_w = j["hb"].value("prior_variance_w", c.hb.prior_variance_w);
      c.hb.max_iterations = j["hb"].value("max_iterations", c.hb.max_iterations);
    }
    if (j.contains("logistic")) c.logistic.l2 = j["logistic"].value("l2", c.logistic.l2);
    c.validate();
    return c;
  }
};

struct EvaluationReport {
  std::string method;
  UtilityType utility_type = UtilityType::linear;
  std::size_t k = 0;
  std::size_t n_respondents = 0;
  std::size_t trial = 0;
  std::optional<double> test_utility;
  std::optional<std::size_t> rank;  // only when 2^K enumeration is feasible
  double runtime_ms = 0.0;
  std::uint64_t seed = 0;
  std::string product;  // bit string; empty for personalised policies
  std::string status = "ok";

  bool ok() const { return status == "ok"; }

  nlohmann::json to_json() const {
    return {{"method", method},
            {"utility_type", static_cast<int>(utility_type)},
            {"K", k},
            {"n_respondents", n_respondents},
            {"trial", trial},
            {"test_utility", test_utility ? nlohmann::json(*test_utility) : nlohmann::json(nullptr)},
            {"rank", rank ? nlohmann::json(*rank) : nlohmann::json(nullptr)},
            {"runtime_ms", runtime_ms},
            {"seed", seed},
            {"product", product},
            {"status", status}};
  }
};

namespace detail {

enum StreamTag : std::uint64_t { kParams = 1, kTest = 2, kTrain = 3, kData = 4, kMethod = 5 };

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::uint64_t method_code(const std::string& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : m) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return h;
}

}  // namespace detail

// One (utility type, K, trial, budget) cell: every method sees the same
// training respondents; the hold-out population is shared across budgets.
inline std::vector<EvaluationReport> run_benchmark_cell(const BenchmarkConfig& cfg, UtilityType type, std::size_t k,
                                                        std::size_t trial, std::size_t budget) {
  using clock = std::chrono::steady_clock;
  const auto t = static_cast<std::uint64_t>(type);
  PopulationSpec spec;
  spec.k = k;
  spec.size = std::max<std::size_t>(budget, 1);
  spec.utility_type = type;
  if (cfg.study == Study::personalized) spec.mixture = MixtureSpec::symmetric(k);
  spec.seed = derive_seed(cfg.seed, {detail::kParams, t, k, trial});

  std::vector<EvaluationReport> out;
  auto make_row = [&](const std::string& method, std::uint64_t seed) {
    EvaluationReport r;
    r.method = method;
    r.utility_type = type;
    r.k = k;
    r.n_respondents = budget;
    r.trial = trial;
    r.seed = seed;
    return r;
  };

  Population train, test;
  std::vector<double> table;
  std::optional<MeanUtility> mean_utility;
  try {
    Rng param_rng(spec.seed);
    const PopulationParams params = draw_population_params(spec, param_rng);
    Rng test_rng(derive_seed(cfg.seed, {detail::kTest, t, k, trial}));
    test = resample_population(params, cfg.test_size, test_rng, 1'000'000'000);
    Rng train_rng(derive_seed(cfg.seed, {detail::kTrain, t, k, trial, budget}));
    train = resample_population(params, budget, train_rng, 0);
    if (cfg.study == Study::single) {
      mean_utility.emplace(test);
      if (k <= kMaxEnumerationK) table = mean_utility->table();
    }
  } catch (const std::exception& e) {
    for (const auto& m : cfg.methods) {
      auto row = make_row(m, spec.seed);
      row.status = std::string("setup failed: ") + e.what();
      out.push_back(std::move(row));
    }
    return out;
  }

  std::optional<PairedChoiceDataset> data;
  auto random_pairs = [&]() -> const PairedChoiceDataset& {
    if (!data) {
      Rng data_rng(derive_seed(cfg.seed, {detail::kData, t, k, trial, budget}));
      data = collect_random_pair_data(train, cfg.questions_per_respondent, data_rng);
    }
    return *data;
  };

  auto score_product = [&](EvaluationReport& row, const ProductProfile& p) {
    row.product = p.to_string();
    row.test_utility = (*mean_utility)(p);
    if (!table.empty()) row.rank = product_rank(p, table);
  };
  auto score_policy = [&](EvaluationReport& row, const std::function<ProductProfile(const RespondentModel&)>& policy) {
    row.test_utility = test_utility(policy, test);
  };

  for (const auto& m : cfg.methods) {
    const std::uint64_t seed = derive_seed(cfg.seed, {detail::kMethod, detail::method_code(m), t, k, trial, budget});
    auto row = make_row(m, seed);
    const auto start = clock::now();
    try {
      if (cfg.study == Study::single) {
        if (m == "gbs") {
          SurveyConfig sc;
          sc.k = k;
          sc.questions_per_respondent = cfg.questions_per_respondent;
          sc.eta = cfg.eta;
          sc.respondents = budget;
          sc.seed = seed;
          sc.order = RespondentOrder::sequential;
          score_product(row, run_single_product(sc, train).product);
        } else if (budget == 0) {
          // Nothing to fit: the empty-data estimate is the all-zero product.
          score_product(row, ProductProfile(k));
        } else if (m == "logistic") {
          score_product(row, fit_logistic(random_pairs(), cfg.logistic).product);
        } else if (m == "hb") {
          score_product(row, fit_hb_map(random_pairs(), cfg.hb).product);
        } else if (m == "nn") {
          NnConfig nc = cfg.nn;
          nc.fit.seed = seed;
          score_product(row, fit_nn_utility(random_pairs(), nc).product);
        }
      } else {
        if (m == "gbs") {
          PolicyConfig pc;
          pc.questions_per_respondent = cfg.questions_per_respondent;
          pc.eta = cfg.policy_eta;
          pc.respondents = budget;
          pc.seed = seed;
          pc.order = RespondentOrder::sequential;
          const auto run = run_policy_learning(pc, train);
          score_policy(row, [&](const RespondentModel& r) { return policy_product(run.policy, r.x); });
        } else if (m == "logistic") {
          const auto p = budget == 0 ? ProductProfile(k) : fit_logistic(random_pairs(), cfg.logistic).product;
          row.product = p.to_string();
          row.test_utility = test_utility(p, test);
        } else if (m == "nn-ind") {
          if (budget == 0) throw ValidationError("NN-ind needs at least one respondent");
          NnConfig nc = cfg.nn;
          nc.fit.seed = seed;
          const auto fit = fit_nn_ind(random_pairs(), nc);
          score_policy(row, [&](const RespondentModel& r) { return fit.policy(r.x); });
        }
      }
    } catch (const std::exception& e) {
      row.status = e.what();
      row.test_utility.reset();
      row.rank.reset();
    }
    if (cfg.record_runtime) row.runtime_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    out.push_back(std::move(row));
  }
  return out;
}

struct BenchmarkResult {
  BenchmarkConfig config;
  std::vector<EvaluationReport> reports;
};

// Cells run on a bounded worker pool; every cell owns its random streams,
// so the output does not depend on `jobs`.
inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  struct Cell {
    UtilityType type;
    std::size_t k, trial, budget;
  };
  std::vector<Cell> cells;
  for (auto type : cfg.utility_types)
    for (auto k : cfg.k_values)
      for (std::size_t trial = 0; trial < cfg.trials; ++trial)
        for (auto budget : cfg.budgets) cells.push_back({type, k, trial, budget});

  std::vector<std::vector<EvaluationReport>> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++)
      results[i] = run_benchmark_cell(cfg, cells[i].type, cells[i].k, cells[i].trial, cells[i].budget);
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  BenchmarkResult res{cfg, {}};
  for (auto& r : results)
    for (auto& row : r) res.reports.push_back(std::move(row));
  return res;
}

inline void write_csv(std::ostream& os, const std::vector<EvaluationReport>& reports, bool record_runtime = true) {
  os << "method,utility_type,K,n_respondents,trial,test_utility,rank,runtime_ms,seed,status\n";
  for (const auto& r : reports) {
    os << detail::csv_escape(r.method) << ',' << static_cast<int>(r.utility_type) << ',' << r.k << ',' << r.n_respondents << ','
       << r.trial << ',' << (r.test_utility ? detail::format_double(*r.test_utility) : "") << ','
       << (r.rank ? std::to_string(*r.rank) : "") << ',' << (record_runtime ? detail::format_double(r.runtime_ms) : "") << ','
       << r.seed << ',' << detail::csv_escape(r.status) << '\n';
  }
}

struct SummaryStats {
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  std::size_t count = 0;
};

// Linear-interpolation quantiles; median of an even count averages the middle pair.
inline SummaryStats summarize(std::vector<double> v) {
  SummaryStats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  s.median = q(0.5);
  s.q1 = q(0.25);
  s.q3 = q(0.75);
  return s;
}

struct CellKey {
  std::string method;
  UtilityType type;
  std::size_t k;
  std::size_t budget;
  auto operator<=>(const CellKey&) const = default;
};

struct CellSummary {
  SummaryStats utility;
  SummaryStats rank;
  std::size_t failures = 0;
};

inline std::map<CellKey, CellSummary> summarize(const std::vector<EvaluationReport>& reports) {
  std::map<CellKey, std::pair<std::vector<double>, std::vector<double>>> grouped;
  std::map<CellKey, std::size_t> failures;
  for (const auto& r : reports) {
    CellKey key{r.method, r.utility_type, r.k, r.n_respondents};
    auto& g = grouped[key];
    if (!r.ok()) ++failures[key];
    if (r.test_utility) g.first.push_back(*r.test_utility);
    if (r.rank) g.second.push_back(static_cast<double>(*r.rank));
  }
  std::map<CellKey, CellSummary> out;
  for (auto& [key, g] : grouped) out[key] = {summarize(g.first), summarize(g.second), failures[key]};
  return out;
}

inline nlohmann::json to_json(const BenchmarkResult& res) {
  nlohmann::json j;
  j["config"] = res.config.to_json();
  auto rows = nlohmann::json::array();
  for (const auto& r : res.reports) rows.push_back(r.to_json());
  j["results"] = rows;
  auto summary = nlohmann::json::array();
  for (const auto& [key, s] : summarize(res.reports)) {
    nlohmann::json row{{"method", key.method},
                       {"utility_type", static_cast<int>(key.type)},
                       {"K", key.k},
                       {"n_respondents", key.budget},
                       {"utility_median", s.utility.median},
                       {"utility_q1", s.utility.q1},
                       {"utility_q3", s.utility.q3},
                       {"trials", s.utility.count},
                       {"failures", s.failures}};
    if (s.rank.count > 0) {
      row["rank_median"] = s.rank.median;
      row["rank_q1"] = s.rank.q1;
      row["rank_q3"] = s.rank.q3;
    }
    summary.push_back(row);
  }
  j["summary"] = summary;
  return j;
}

}  // namespace gbs

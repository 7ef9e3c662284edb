// gbs: simulate | bench | serve | verify | export

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "gbs/gbs.hpp"
#include "gbs/service/http.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
}

// Defaults < flags < config file.
json layer(json flags, const std::string& config_path) {
  if (config_path.empty()) return flags;
  const json file = read_json_file(config_path);
  if (!file.is_object()) throw UsageError("config file must hold a JSON object");
  for (const auto& [key, value] : file.items()) flags[key] = value;
  return flags;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << content;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

template <class T>
void set_if(json& j, const char* key, const CLI::Option* opt, const T& value) {
  if (opt->count() > 0) j[key] = value;
}

// ---- simulate -------------------------------------------------------------

struct SimulateFlags {
  std::string config, out = "gbs-simulate";
  std::string mode = "single", order = "sequential", type = "1";
  std::size_t k = 10, respondents = 100, n_q = 10, population_size = 0, test_size = 1000;
  double eta = 0.0, init_sd = 0.05;
  std::uint64_t seed = 0;
};

int cmd_simulate(const json& c) {
  const std::string mode = c.value("mode", "single");
  if (mode != "single" && mode != "policy") throw UsageError("mode: expected single or policy, got '" + mode + "'");
  const std::string order = c.value("order", "sequential");
  if (order != "sequential" && order != "uniform") throw UsageError("order: expected sequential or uniform, got '" + order + "'");
  const fs::path out = c.value("out", "gbs-simulate");
  const std::size_t n = c.value("respondents", std::size_t{100});
  const std::uint64_t seed = c.value("seed", std::uint64_t{0});

  gbs::PopulationSpec spec;
  spec.k = c.value("K", std::size_t{10});
  spec.size = std::max<std::size_t>(1, c.value("population_size", std::size_t{0}) > 0 ? c.value("population_size", std::size_t{0}) : n);
  const json type = c.value("type", json("1"));
  spec.utility_type = gbs::utility_type_from_string(type.is_string() ? type.get<std::string>() : std::to_string(type.get<int>()));
  if (mode == "policy") spec.mixture = gbs::MixtureSpec::symmetric(spec.k);
  spec.seed = gbs::derive_seed(seed, {1});
  spec.validate();

  gbs::Rng param_rng(spec.seed);
  const auto params = gbs::draw_population_params(spec, param_rng);
  gbs::Rng train_rng(gbs::derive_seed(seed, {3}));
  const auto train = gbs::resample_population(params, spec.size, train_rng, 0);
  gbs::Rng test_rng(gbs::derive_seed(seed, {2}));
  const auto test = gbs::resample_population(params, c.value("test_size", std::size_t{1000}), test_rng, 1'000'000'000);

  json report{{"mode", mode}, {"K", spec.k}, {"utility_type", static_cast<int>(spec.utility_type)}, {"respondents", n}, {"seed", seed}};
  const auto start = std::chrono::steady_clock::now();
  std::ostringstream trace;
  if (mode == "single") {
    gbs::SurveyConfig cfg;
    cfg.k = spec.k;
    cfg.questions_per_respondent = c.value("n_q", cfg.questions_per_respondent);
    cfg.eta = c.value("eta", cfg.eta);
    cfg.respondents = n;
    cfg.seed = seed;
    cfg.init_sd = c.value("init_sd", cfg.init_sd);
    cfg.order = order == "uniform" ? gbs::RespondentOrder::uniform : gbs::RespondentOrder::sequential;
    const auto run = gbs::run_single_product(cfg, train);
    gbs::write_trace_jsonl(trace, run.trace);
    report["survey"] = cfg.to_json();
    report["product"] = run.product.to_string();
    report["final_phi"] = run.final_logits.phi;
    report["questions"] = run.trace.size();
    const gbs::MeanUtility mean(test);
    report["test_utility"] = mean(run.product);
    if (spec.k <= gbs::kMaxEnumerationK) {
      const auto table = mean.table();
      report["rank"] = gbs::product_rank(run.product, table);
      report["optimal_product"] = gbs::argmax_profile(table, spec.k).to_string();
    } else {
      report["rank"] = nullptr;
    }
  } else {
    gbs::PolicyConfig cfg;
    cfg.questions_per_respondent = c.value("n_q", cfg.questions_per_respondent);
    cfg.eta = c.value("eta", cfg.eta);
    cfg.respondents = n;
    cfg.seed = seed;
    cfg.order = order == "uniform" ? gbs::RespondentOrder::uniform : gbs::RespondentOrder::sequential;
    const auto run = gbs::run_policy_learning(cfg, train);
    for (const auto& r : run.trace) trace << gbs::to_json(r).dump() << '\n';
    report["survey"] = cfg.to_json();
    report["questions"] = run.trace.size();
    report["test_utility"] = gbs::test_utility([&](const gbs::RespondentModel& r) { return gbs::policy_product(run.policy, r.x); }, test);
    write_json(out / "policy.json", run.policy.to_json());
  }
  report["runtime_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  write_file(out / "trace.jsonl", trace.str());
  write_json(out / "report.json", report);
  write_json(out / "population.json", gbs::to_json(train));
  write_json(out / "config.json", c);
  std::cout << report.dump(2) << "\n";
  return kOk;
}

// ---- bench ----------------------------------------------------------------

int cmd_bench(const json& c) {
  const fs::path out = c.value("out", "gbs-bench");
  json bench = c;
  bench.erase("out");
  const gbs::BenchmarkConfig cfg = gbs::BenchmarkConfig::from_json(bench);
  const auto res = gbs::run_benchmark(cfg);
  std::ostringstream csv;
  gbs::write_csv(csv, res.reports, cfg.record_runtime);
  write_file(out / "results.csv", csv.str());
  json summary = gbs::to_json(res);
  if (!cfg.record_runtime)
    for (auto& row : summary["results"]) row["runtime_ms"] = nullptr;
  write_json(out / "results.json", summary);
  write_json(out / "config.json", cfg.to_json());
  std::size_t failures = 0;
  for (const auto& r : res.reports) failures += !r.ok();
  for (const auto& row : summary["summary"]) {
    std::cout << row["method"].get<std::string>() << " type=" << row["utility_type"] << " K=" << row["K"] << " N=" << row["n_respondents"]
              << " utility_median=" << row["utility_median"];
    if (row.contains("rank_median")) std::cout << " rank_median=" << row["rank_median"];
    std::cout << "\n";
  }
  std::cout << res.reports.size() << " rows (" << failures << " failed sub-runs) written to " << (out / "results.csv").string() << "\n";
  return kOk;
}

// ---- verify ---------------------------------------------------------------

int cmd_verify(const json& c) {
  gbs::VerifyOptions o;
  o.seed = c.value("seed", o.seed);
  o.mc_draws = c.value("draws", o.mc_draws);
  o.differ_draws = c.value("draws", o.differ_draws);
  const auto results = gbs::run_identity_suite(o);
  json report = json::array();
  for (const auto& r : results) {
    std::cout << r.line() << "\n";
    report.push_back(r.to_json());
  }
  const bool ok = gbs::all_passed(results);
  std::cout << (ok ? "all identity checks passed" : "identity checks FAILED") << "\n";
  if (c.contains("out")) {
    const fs::path out = c["out"].get<std::string>();
    write_json(out / "verify.json", report);
    write_json(out / "config.json", c);
  }
  return ok ? kOk : kFailure;
}

// ---- serve ----------------------------------------------------------------

gbs::service::SurveyServer* g_server = nullptr;

int cmd_serve(const json& c) {
  const std::string host = c.value("host", "127.0.0.1");
  const int port = c.value("port", 8080);
  const fs::path data_dir = c.value("data_dir", "gbs-data");
  gbs::service::SessionStore store(data_dir);
  for (const auto& e : store.load_errors()) std::cerr << "warning: skipped session " << e << "\n";
  write_json(data_dir / "server-config.json", c);
  gbs::service::SurveyServer server(store);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cout << "serving " << store.ids().size() << " sessions from " << data_dir.string() << " on http://" << host << ":" << port << std::endl;
  if (!server.listen(host, port)) {
    std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
    return kFailure;
  }
  return kOk;
}

// ---- export ---------------------------------------------------------------

int cmd_export(const json& c) {
  if (!c.contains("session")) throw UsageError("--session is required");
  const fs::path data_dir = c.value("data_dir", "gbs-data");
  const std::string id = c["session"].get<std::string>();
  // Opening replays and validates the log.
  const auto session = gbs::service::Session::open(data_dir / id);
  const std::string what = c.value("what", "events");
  std::string content;
  if (what == "events") content = session->export_log();
  else if (what == "state") content = session->state().dump(2) + "\n";
  else throw UsageError("what: expected events or state, got '" + what + "'");
  if (c.contains("out")) {
    const fs::path out = c["out"].get<std::string>();
    write_file(out, content);
    write_json(fs::path(out.string() + ".config.json"), c);
  } else {
    std::cout << content;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based paired-comparison surveys: simulation, benchmarks, live service"};
  app.require_subcommand(1);

  // simulate
  SimulateFlags sf;
  auto* sim = app.add_subcommand("simulate", "Run one adaptive survey against a simulated population");
  sim->add_option("--config", sf.config, "JSON config file (overrides flags)");
  auto* o_mode = sim->add_option("--mode", sf.mode, "single or policy")->check(CLI::IsMember({"single", "policy"}));
  auto* o_k = sim->add_option("--K", sf.k, "Number of binary attributes")->check(CLI::PositiveNumber);
  auto* o_type = sim->add_option("--type", sf.type, "Utility type: 1 linear, 2 pairwise, 3 network");
  auto* o_resp = sim->add_option("--respondents", sf.respondents, "Respondent budget N");
  auto* o_nq = sim->add_option("--n-q", sf.n_q, "Questions per respondent")->check(CLI::PositiveNumber);
  auto* o_eta = sim->add_option("--eta", sf.eta, "Stepsize (default 0.3 single, 0.003 policy)");
  auto* o_seed = sim->add_option("--seed", sf.seed, "Random seed");
  auto* o_pop = sim->add_option("--population-size", sf.population_size, "Training population size (default N)");
  auto* o_test = sim->add_option("--test-size", sf.test_size, "Hold-out population size")->check(CLI::PositiveNumber);
  auto* o_order = sim->add_option("--order", sf.order, "sequential or uniform respondent sampling");
  auto* o_init = sim->add_option("--init-sd", sf.init_sd, "Standard deviation of the initial logits");
  auto* o_out = sim->add_option("--out", sf.out, "Output directory");

  // bench
  std::string bench_config, bench_out = "gbs-bench", study;
  std::vector<std::string> methods;
  std::vector<int> types;
  std::vector<std::size_t> ks, budgets;
  std::size_t trials = 0, jobs = 1, test_size = 0, bench_nq = 0;
  std::uint64_t bench_seed = 0;
  bool no_runtime = false;
  auto* bench = app.add_subcommand("bench", "Run the method comparison grid");
  bench->add_option("--config", bench_config, "JSON benchmark config (overrides flags)");
  auto* b_study = bench->add_option("--study", study, "single or personalized");
  auto* b_methods = bench->add_option("--methods", methods, "Methods (gbs, logistic, hb, nn, nn-ind)")->delimiter(',');
  auto* b_types = bench->add_option("--types", types, "Utility types")->delimiter(',');
  auto* b_k = bench->add_option("--K", ks, "Attribute counts")->delimiter(',');
  auto* b_budgets = bench->add_option("--budgets", budgets, "Respondent budgets")->delimiter(',');
  auto* b_trials = bench->add_option("--trials", trials, "Trials per cell");
  auto* b_seed = bench->add_option("--seed", bench_seed, "Base seed");
  auto* b_nq = bench->add_option("--n-q", bench_nq, "Questions per respondent");
  auto* b_test = bench->add_option("--test-size", test_size, "Hold-out population size");
  auto* b_jobs = bench->add_option("--jobs", jobs, "Worker threads");
  auto* b_nort = bench->add_flag("--no-runtime", no_runtime, "Leave runtime_ms empty so reruns are byte-identical");
  auto* b_out = bench->add_option("--out", bench_out, "Output directory");

  // verify
  std::string verify_config, verify_out;
  std::uint64_t verify_seed = 0;
  std::size_t draws = 0;
  auto* verify = app.add_subcommand("verify", "Run the analytic identity suite");
  verify->add_option("--config", verify_config, "JSON config file");
  auto* v_seed = verify->add_option("--seed", verify_seed, "Seed");
  auto* v_draws = verify->add_option("--draws", draws, "Monte-Carlo draws")->check(CLI::PositiveNumber);
  auto* v_out = verify->add_option("--out", verify_out, "Directory for verify.json");

  // serve
  std::string serve_config, host = "127.0.0.1", data_dir = "gbs-data";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Host live survey sessions over HTTP");
  serve->add_option("--config", serve_config, "JSON config file");
  auto* s_port = serve->add_option("--port", port, "Port")->check(CLI::Range(0, 65535));
  auto* s_host = serve->add_option("--host", host, "Bind address");
  auto* s_dir = serve->add_option("--data-dir", data_dir, "Session storage directory");

  // export
  std::string export_config, export_dir = "gbs-data", session, what = "events", export_out;
  auto* exp = app.add_subcommand("export", "Export a session's event log or state");
  exp->add_option("--config", export_config, "JSON config file");
  auto* e_dir = exp->add_option("--data-dir", export_dir, "Session storage directory");
  auto* e_session = exp->add_option("--session", session, "Session id");
  auto* e_what = exp->add_option("--what", what, "events or state")->check(CLI::IsMember({"events", "state"}));
  auto* e_out = exp->add_option("--out", export_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) {
      json f;
      set_if(f, "mode", o_mode, sf.mode);
      set_if(f, "K", o_k, sf.k);
      set_if(f, "type", o_type, sf.type);
      set_if(f, "respondents", o_resp, sf.respondents);
      set_if(f, "n_q", o_nq, sf.n_q);
      set_if(f, "eta", o_eta, sf.eta);
      set_if(f, "seed", o_seed, sf.seed);
      set_if(f, "population_size", o_pop, sf.population_size);
      set_if(f, "test_size", o_test, sf.test_size);
      set_if(f, "order", o_order, sf.order);
      set_if(f, "init_sd", o_init, sf.init_sd);
      set_if(f, "out", o_out, sf.out);
      return cmd_simulate(layer(f, sf.config));
    }
    if (*bench) {
      json f;
      set_if(f, "study", b_study, study);
      set_if(f, "methods", b_methods, methods);
      set_if(f, "utility_types", b_types, types);
      set_if(f, "K", b_k, ks);
      set_if(f, "budgets", b_budgets, budgets);
      set_if(f, "trials", b_trials, trials);
      set_if(f, "seed", b_seed, bench_seed);
      set_if(f, "n_q", b_nq, bench_nq);
      set_if(f, "test_size", b_test, test_size);
      set_if(f, "jobs", b_jobs, jobs);
      if (b_nort->count() > 0) f["record_runtime"] = false;
      set_if(f, "out", b_out, bench_out);
      return cmd_bench(layer(f, bench_config));
    }
    if (*verify) {
      json f;
      set_if(f, "seed", v_seed, verify_seed);
      set_if(f, "draws", v_draws, draws);
      set_if(f, "out", v_out, verify_out);
      return cmd_verify(layer(f, verify_config));
    }
    if (*serve) {
      json f;
      set_if(f, "port", s_port, port);
      set_if(f, "host", s_host, host);
      set_if(f, "data_dir", s_dir, data_dir);
      return cmd_serve(layer(f, serve_config));
    }
    if (*exp) {
      json f;
      set_if(f, "data_dir", e_dir, export_dir);
      set_if(f, "session", e_session, session);
      set_if(f, "what", e_what, what);
      set_if(f, "out", e_out, export_out);
      return cmd_export(layer(f, export_config));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const gbs::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const json::exception& e) {
    std::cerr << "usage error: bad config value: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

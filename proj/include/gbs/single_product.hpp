#pragma once

// The adaptive survey loop for a single optimal product.

#include <functional>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/respondent.hpp"

namespace gbs {

enum class RespondentOrder {
  uniform,     // sample a random individual (with replacement) each round
  sequential,  // visit the population once, in order; one round per respondent
};

struct SurveyConfig {
  std::size_t k = 10;
  std::size_t questions_per_respondent = 10;  // n_q
  double eta = 0.3;
  std::size_t respondents = 100;  // N, number of rounds
  std::uint64_t seed = 0;
  double init_sd = 0.05;
  RespondentOrder order = RespondentOrder::uniform;

  void validate() const {
    if (k < 1) throw ConfigError("K must be at least 1");
    if (questions_per_respondent < 1) throw ConfigError("n_q must be at least 1");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be a positive finite number");
    if (!(init_sd >= 0.0)) throw ConfigError("init_sd must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"K", k},
            {"n_q", questions_per_respondent},
            {"eta", eta},
            {"respondents", respondents},
            {"seed", seed},
            {"init_sd", init_sd},
            {"order", order == RespondentOrder::uniform ? "uniform" : "sequential"}};
  }
};

struct TraceRecord {
  std::uint64_t step = 0;
  std::size_t respondent_id = 0;
  std::vector<double> u;
  ProductProfile z1;
  ProductProfile z2;
  Choice y = Choice::second;
  PolicyLogits phi_after;
};

struct SingleProductRun {
  PolicyLogits initial;
  std::vector<TraceRecord> trace;
  std::vector<ProductProfile> running_product;  // extraction after each respondent
  PolicyLogits final_logits;
  ProductProfile product;
};

inline nlohmann::json to_json(const TraceRecord& r) {
  return {{"step", r.step},
          {"respondent_id", r.respondent_id},
          {"u", r.u},
          {"z1", r.z1.bits},
          {"z2", r.z2.bits},
          {"y", as_int(r.y)},
          {"phi_after", r.phi_after.phi}};
}

inline void write_trace_jsonl(std::ostream& os, const std::vector<TraceRecord>& trace) {
  for (const auto& r : trace) os << to_json(r).dump() << '\n';
}

// Answers a question for a given respondent index; lets live or scripted
// sources stand in for the simulated population.
using AnswerFn = std::function<Choice(std::size_t respondent_index, const PairedQuestion&, Rng&)>;

inline SingleProductRun run_single_product(const SurveyConfig& cfg, std::size_t population_size, const AnswerFn& answer_fn,
                                           const std::function<std::size_t(std::size_t)>& respondent_id = {}) {
  cfg.validate();
  if (population_size == 0 && cfg.respondents > 0) throw ConfigError("empty respondent population");
  Rng init_rng(derive_seed(cfg.seed, {0x1417}));
  Rng question_rng(derive_seed(cfg.seed, {0x9e57}));
  Rng choice_rng(derive_seed(cfg.seed, {0xc401}));
  Rng pick_rng(derive_seed(cfg.seed, {0x5e1e}));

  SingleProductRun run;
  run.initial = PolicyLogits::random(cfg.k, init_rng, cfg.init_sd);
  PolicyLogits phi = run.initial;
  run.trace.reserve(cfg.respondents * cfg.questions_per_respondent);
  std::uint64_t step = 0;
  for (std::size_t round = 0; round < cfg.respondents; ++round) {
    const std::size_t i = cfg.order == RespondentOrder::uniform ? static_cast<std::size_t>(pick_rng.index(population_size))
                                                                : round % population_size;
    for (std::size_t j = 0; j < cfg.questions_per_respondent; ++j) {
      PairedQuestion q = sample_question(phi, question_rng, step);
      const Choice y = answer_fn(i, q, choice_rng);
      phi = sgd_update(phi, gbs_gradient(y, q), cfg.eta);
      run.trace.push_back({step, respondent_id ? respondent_id(i) : i, std::move(q.u), std::move(q.z1), std::move(q.z2), y, phi});
      ++step;
    }
    run.running_product.push_back(extract_product(phi));
  }
  run.final_logits = phi;
  run.product = extract_product(phi);
  return run;
}

inline SingleProductRun run_single_product(const SurveyConfig& cfg, const Population& population) {
  if (population.k() != cfg.k) throw ConfigError("population K does not match survey K");
  return run_single_product(
      cfg, population.size(),
      [&](std::size_t i, const PairedQuestion& q, Rng& rng) { return answer(population.respondents[i], q.z1, q.z2, rng); },
      [&](std::size_t i) { return population.respondents[i].id; });
}

}  // namespace gbs

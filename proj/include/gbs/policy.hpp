#pragma once

// Individualised policy learning: an amortised network maps covariates to
// per-attribute logits and is trained from paired choices by the chain rule.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/neural.hpp"
#include "gbs/respondent.hpp"
#include "gbs/single_product.hpp"

namespace gbs {

struct AmortizedPolicy {
  Mlp net;
  FeatureScaler input;  // covariate standardisation; identity when empty

  std::size_t k() const { return static_cast<std::size_t>(net.output_dim()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(net.input_dim()); }

  // d -> hidden -> hidden -> K relu network. The output layer is scaled down
  // so the initial policy sits near pi = 0.5.
  static AmortizedPolicy random(std::size_t d, std::size_t k, Rng& rng, int hidden = 64, double output_scale = 0.1) {
    return {Mlp::random({static_cast<int>(d), hidden, hidden, static_cast<int>(k)}, Activation::relu, rng, 2.0, output_scale), {}};
  }

  nlohmann::json to_json() const { return {{"network", net.to_json()}, {"input_scaler", input.empty() ? nlohmann::json(nullptr) : input.to_json()}}; }

  static AmortizedPolicy from_json(const nlohmann::json& j) {
    AmortizedPolicy p{Mlp::from_json(j.at("network")), FeatureScaler::from_json(j.value("input_scaler", nlohmann::json(nullptr)))};
    if (!p.input.empty() && p.input.mean.size() != p.input_dim()) throw ValidationError("policy scaler length does not match input dimension");
    return p;
  }
};

inline PolicyLogits policy_logits(const AmortizedPolicy& p, std::span<const double> x) {
  if (x.size() != p.input_dim()) throw ConfigError("covariate length does not match policy input dimension");
  const Eigen::VectorXd out = p.net.forward(p.input.apply(x));
  return PolicyLogits(std::vector<double>(out.data(), out.data() + out.size()));
}

// 1[pi_theta(X) > 0.5]
inline ProductProfile policy_product(const AmortizedPolicy& p, std::span<const double> x) {
  return extract_product(policy_logits(p, x));
}

// theta <- theta + eta * g_GBS(theta), where the per-logit estimate is
// backpropagated through the network as the upstream gradient.
inline void policy_gradient_step_inplace(AmortizedPolicy& p, std::span<const double> x, const PairedQuestion& q, Choice y, double eta) {
  if (x.size() != p.input_dim()) throw ConfigError("covariate length does not match policy input dimension");
  if (q.u.size() != p.k()) throw ConfigError("question length does not match policy output dimension");
  const GradientEstimate g = gbs_gradient(y, q);
  const Eigen::VectorXd xv = p.input.apply(x);
  const Eigen::VectorXd up = Eigen::Map<const Eigen::VectorXd>(g.g.data(), static_cast<Eigen::Index>(g.g.size()));
  p.net.apply(p.net.backward(xv, up), eta);
  if (!p.net.all_finite()) throw DivergenceError("policy update produced non-finite parameters");
}

inline AmortizedPolicy policy_gradient_step(const AmortizedPolicy& p, std::span<const double> x, const PairedQuestion& q, Choice y, double eta) {
  AmortizedPolicy next = p;
  policy_gradient_step_inplace(next, x, q, y, eta);
  return next;
}

// FNV-1a over the raw bytes of the covariate vector.
inline std::string covariate_hash(std::span<const double> x) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : x) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct PolicyConfig {
  std::size_t questions_per_respondent = 10;
  double eta = 0.003;
  std::size_t respondents = 100;
  std::uint64_t seed = 0;
  int hidden = 64;
  double output_scale = 0.1;
  bool standardize_covariates = true;
  RespondentOrder order = RespondentOrder::uniform;

  void validate() const {
    if (questions_per_respondent < 1) throw ConfigError("n_q must be at least 1");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be a positive finite number");
    if (hidden < 1) throw ConfigError("hidden width must be positive");
  }

  nlohmann::json to_json() const {
    return {{"n_q", questions_per_respondent},
            {"eta", eta},
            {"respondents", respondents},
            {"seed", seed},
            {"hidden", hidden},
            {"output_scale", output_scale},
            {"standardize_covariates", standardize_covariates},
            {"order", order == RespondentOrder::uniform ? "uniform" : "sequential"}};
  }
};

struct PolicyTraceRecord {
  std::uint64_t step = 0;
  std::size_t respondent_id = 0;
  std::string covariate_hash;
  std::vector<double> u;
  ProductProfile z1;
  ProductProfile z2;
  Choice y = Choice::second;
  PolicyLogits phi;  // logits the question was generated from
};

inline nlohmann::json to_json(const PolicyTraceRecord& r) {
  return {{"step", r.step},
          {"respondent_id", r.respondent_id},
          {"covariate_hash", r.covariate_hash},
          {"u", r.u},
          {"z1", r.z1.bits},
          {"z2", r.z2.bits},
          {"y", as_int(r.y)},
          {"phi", r.phi.phi}};
}

struct PolicyRun {
  AmortizedPolicy initial;
  AmortizedPolicy policy;
  std::vector<PolicyTraceRecord> trace;
};

inline PolicyRun run_policy_learning(const PolicyConfig& cfg, const Population& pop) {
  cfg.validate();
  if (pop.size() == 0 && cfg.respondents > 0) throw ConfigError("empty respondent population");
  for (const auto& r : pop.respondents)
    if (r.x.empty()) throw ValidationError("respondent " + std::to_string(r.id) + " has no covariates");
  const std::size_t d = pop.respondents.empty() ? pop.k() : pop.respondents.front().x.size();
  Rng init_rng(derive_seed(cfg.seed, {0x1417}));
  Rng question_rng(derive_seed(cfg.seed, {0x9e57}));
  Rng choice_rng(derive_seed(cfg.seed, {0xc401}));
  Rng pick_rng(derive_seed(cfg.seed, {0x5e1e}));

  PolicyRun run;
  run.initial = AmortizedPolicy::random(d, pop.k(), init_rng, cfg.hidden, cfg.output_scale);
  if (cfg.standardize_covariates) {
    std::vector<std::vector<double>> rows;
    for (const auto& r : pop.respondents) rows.push_back(r.x);
    run.initial.input = FeatureScaler::fit(rows);
  }
  run.policy = run.initial;
  std::uint64_t step = 0;
  for (std::size_t round = 0; round < cfg.respondents; ++round) {
    const std::size_t i = cfg.order == RespondentOrder::uniform ? static_cast<std::size_t>(pick_rng.index(pop.size()))
                                                                : round % pop.size();
    const auto& r = pop.respondents[i];
    const std::string hash = covariate_hash(r.x);
    for (std::size_t j = 0; j < cfg.questions_per_respondent; ++j) {
      const PolicyLogits phi = policy_logits(run.policy, r.x);
      PairedQuestion q = sample_question(phi, question_rng, step);
      const Choice y = answer(r, q.z1, q.z2, choice_rng);
      policy_gradient_step_inplace(run.policy, r.x, q, y, cfg.eta);
      run.trace.push_back({step, r.id, hash, std::move(q.u), std::move(q.z1), std::move(q.z2), y, phi});
      ++step;
    }
  }
  return run;
}

}  // namespace gbs

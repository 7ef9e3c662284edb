#pragma once

// Synthetic respondent populations and the logit choice rule.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/error.hpp"
#include "gbs/neural.hpp"
#include "gbs/random.hpp"

namespace gbs {

enum class UtilityType { linear = 1, pairwise = 2, network = 3 };

inline const char* to_string(UtilityType t) {
  switch (t) {
    case UtilityType::linear: return "linear";
    case UtilityType::pairwise: return "pairwise";
    case UtilityType::network: return "network";
  }
  return "linear";
}

// Accepts "1"/"2"/"3" as well as the names above.
inline UtilityType utility_type_from_string(const std::string& s) {
  if (s == "1" || s == "linear") return UtilityType::linear;
  if (s == "2" || s == "pairwise") return UtilityType::pairwise;
  if (s == "3" || s == "network") return UtilityType::network;
  throw ConfigError("unknown utility type '" + s + "'");
}

struct MixtureSpec {
  std::vector<double> mu1;
  std::vector<double> mu2;
  double sigma = 1.0;  // component covariance sigma^2 I

  // +1 on the first ceil(K/2) coordinates and -1 elsewhere; mu2 = -mu1.
  static MixtureSpec symmetric(std::size_t k, double magnitude = 1.0, double sigma = 1.0) {
    MixtureSpec m;
    m.mu1.assign(k, -magnitude);
    for (std::size_t j = 0; j < (k + 1) / 2; ++j) m.mu1[j] = magnitude;
    m.mu2.resize(k);
    for (std::size_t j = 0; j < k; ++j) m.mu2[j] = -m.mu1[j];
    m.sigma = sigma;
    return m;
  }
};

struct PopulationSpec {
  std::size_t k = 10;
  std::size_t size = 100;
  UtilityType utility_type = UtilityType::linear;
  std::optional<MixtureSpec> mixture;
  std::uint64_t seed = 0;
  // All K(K-1)/2 pairs are used when there are at most this many; otherwise a
  // shared random subset of exactly this size.
  std::size_t max_interactions = 100;
  double network_output_scale = 4.0;

  void validate() const {
    if (k < 1) throw ConfigError("population K must be at least 1");
    if (size < 1) throw ConfigError("population size must be at least 1");
    if (mixture) {
      if (utility_type != UtilityType::pairwise)
        throw ConfigError("mixture populations require the pairwise-interaction utility type");
      if (mixture->mu1.size() != k || mixture->mu2.size() != k)
        throw ConfigError("mixture means must have length K");
      if (!(mixture->sigma > 0.0)) throw ConfigError("mixture sigma must be positive");
    }
  }
};

struct Interaction {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

struct RespondentModel {
  std::size_t id = 0;
  UtilityType utility_type = UtilityType::linear;
  std::vector<double> w;
  std::vector<Interaction> interactions;
  std::shared_ptr<const Mlp> net;
  std::vector<double> x;  // covariates, exp(w) for mixture populations
};

// Trial-level draws shared by every respondent of a trial (training and hold-out).
struct PopulationParams {
  PopulationSpec spec;
  std::vector<double> mu;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::shared_ptr<const Mlp> net;
};

struct Population {
  PopulationParams params;
  std::vector<RespondentModel> respondents;

  std::size_t k() const { return params.spec.k; }
  std::size_t size() const { return respondents.size(); }
};

inline std::vector<std::pair<std::size_t, std::size_t>> draw_interaction_pairs(std::size_t k, std::size_t max_pairs, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) all.emplace_back(a, b);
  if (all.size() <= max_pairs) return all;
  // Partial Fisher-Yates: uniform subset without replacement.
  for (std::size_t i = 0; i < max_pairs; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(all.size() - i));
    std::swap(all[i], all[j]);
  }
  all.resize(max_pairs);
  std::sort(all.begin(), all.end());
  return all;
}

// K -> 32 -> 32 -> 1 tanh network, weights Normal(0, 1/fan_in), output scaled.
inline Mlp make_utility_network(std::size_t k, Rng& rng, double output_scale) {
  return Mlp::random({static_cast<int>(k), 32, 32, 1}, Activation::tanh, rng, 1.0, output_scale);
}

inline PopulationParams draw_population_params(const PopulationSpec& spec, Rng& rng) {
  spec.validate();
  PopulationParams p;
  p.spec = spec;
  // mu ~ N(a, I), a = 1.
  p.mu.resize(spec.k);
  for (auto& m : p.mu) m = rng.normal(1.0, 1.0);
  if (spec.utility_type == UtilityType::pairwise) p.pairs = draw_interaction_pairs(spec.k, spec.max_interactions, rng);
  if (spec.utility_type == UtilityType::network)
    p.net = std::make_shared<const Mlp>(make_utility_network(spec.k, rng, spec.network_output_scale));
  return p;
}

inline RespondentModel draw_respondent(const PopulationParams& p, std::size_t id, Rng& rng) {
  const auto& spec = p.spec;
  RespondentModel r;
  r.id = id;
  r.utility_type = spec.utility_type;
  r.w.resize(spec.k);
  if (spec.mixture) {
    const auto& mean = rng.uniform() < 0.5 ? spec.mixture->mu1 : spec.mixture->mu2;
    for (std::size_t j = 0; j < spec.k; ++j) r.w[j] = rng.normal(mean[j], spec.mixture->sigma);
    r.x.resize(spec.k);
    for (std::size_t j = 0; j < spec.k; ++j) r.x[j] = std::exp(r.w[j]);
  } else {
    for (std::size_t j = 0; j < spec.k; ++j) r.w[j] = rng.normal(p.mu[j], 1.0);
  }
  if (spec.utility_type == UtilityType::pairwise) {
    r.interactions.reserve(p.pairs.size());
    // Uniform(-2 a_k, 0) with a = 1.
    for (const auto& [a, b] : p.pairs) r.interactions.push_back({a, b, rng.uniform(-2.0, 0.0)});
  }
  r.net = p.net;
  return r;
}

inline std::vector<RespondentModel> draw_respondents(const PopulationParams& p, std::size_t n, Rng& rng, std::size_t first_id = 0) {
  std::vector<RespondentModel> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_respondent(p, first_id + i, rng));
  return out;
}

inline Population generate_population(const PopulationSpec& spec, Rng& rng) {
  Population pop;
  pop.params = draw_population_params(spec, rng);
  pop.respondents = draw_respondents(pop.params, spec.size, rng);
  return pop;
}

inline Population generate_population(const PopulationSpec& spec) {
  Rng rng(spec.seed);
  return generate_population(spec, rng);
}

// Another draw of respondents from the same trial (shared mu, pairs, f0).
inline Population resample_population(const PopulationParams& params, std::size_t n, Rng& rng, std::size_t first_id = 0) {
  Population pop;
  pop.params = params;
  pop.params.spec.size = n;
  pop.respondents = draw_respondents(params, n, rng, first_id);
  return pop;
}

inline double representative_utility(const RespondentModel& r, const ProductProfile& z) {
  if (z.size() != r.w.size()) throw ConfigError("profile length does not match respondent K");
  if (r.utility_type == UtilityType::network) {
    if (!r.net) throw ConfigError("network utility respondent has no network");
    Eigen::VectorXd x(static_cast<Eigen::Index>(z.size()));
    for (std::size_t j = 0; j < z.size(); ++j) x(static_cast<Eigen::Index>(j)) = z.bits[j];
    return r.net->forward(x)(0);
  }
  double v = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (z.bits[j]) v += r.w[j];
  for (const auto& t : r.interactions)
    if (z.bits[t.a] && z.bits[t.b]) v += t.weight;
  return v;
}

// Logit choice probability of preferring z1 over z2.
inline double choice_probability(const RespondentModel& r, const ProductProfile& z1, const ProductProfile& z2) {
  return sigmoid(representative_utility(r, z1) - representative_utility(r, z2));
}

// y ~ Bernoulli(sigmoid(V(z1) - V(z2))), equivalent to Gumbel-noise utility maximisation.
inline Choice answer(const RespondentModel& r, const ProductProfile& z1, const ProductProfile& z2, Rng& rng) {
  return rng.uniform() < choice_probability(r, z1, z2) ? Choice::first : Choice::second;
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const PopulationSpec& s) {
  nlohmann::json j{{"K", s.k},
                   {"size", s.size},
                   {"utility_type", to_string(s.utility_type)},
                   {"seed", s.seed},
                   {"max_interactions", s.max_interactions},
                   {"network_output_scale", s.network_output_scale}};
  if (s.mixture) j["mixture"] = {{"mu1", s.mixture->mu1}, {"mu2", s.mixture->mu2}, {"sigma", s.mixture->sigma}};
  return j;
}

inline PopulationSpec population_spec_from_json(const nlohmann::json& j) {
  PopulationSpec s;
  s.k = j.at("K").get<std::size_t>();
  s.size = j.at("size").get<std::size_t>();
  s.utility_type = utility_type_from_string(j.at("utility_type").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  s.max_interactions = j.value("max_interactions", std::size_t{100});
  s.network_output_scale = j.value("network_output_scale", 4.0);
  if (j.contains("mixture") && !j["mixture"].is_null()) {
    MixtureSpec m;
    m.mu1 = j["mixture"].at("mu1").get<std::vector<double>>();
    m.mu2 = j["mixture"].at("mu2").get<std::vector<double>>();
    m.sigma = j["mixture"].value("sigma", 1.0);
    s.mixture = m;
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const Population& pop) {
  nlohmann::json j;
  j["spec"] = to_json(pop.params.spec);
  j["mu"] = pop.params.mu;
  auto pairs = nlohmann::json::array();
  for (const auto& [a, b] : pop.params.pairs) pairs.push_back({a, b});
  j["pairs"] = pairs;
  j["network"] = pop.params.net ? pop.params.net->to_json() : nlohmann::json(nullptr);
  auto rs = nlohmann::json::array();
  for (const auto& r : pop.respondents) {
    nlohmann::json jr{{"id", r.id}, {"w", r.w}};
    if (!r.interactions.empty()) {
      std::vector<double> iw;
      for (const auto& t : r.interactions) iw.push_back(t.weight);
      jr["interaction_weights"] = iw;
    }
    if (!r.x.empty()) jr["x"] = r.x;
    rs.push_back(jr);
  }
  j["respondents"] = rs;
  return j;
}

inline Population population_from_json(const nlohmann::json& j) {
  Population pop;
  pop.params.spec = population_spec_from_json(j.at("spec"));
  pop.params.mu = j.at("mu").get<std::vector<double>>();
  for (const auto& p : j.at("pairs")) pop.params.pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  if (j.contains("network") && !j["network"].is_null()) pop.params.net = std::make_shared<const Mlp>(Mlp::from_json(j["network"]));
  const std::size_t k = pop.params.spec.k;
  for (const auto& jr : j.at("respondents")) {
    RespondentModel r;
    r.id = jr.at("id").get<std::size_t>();
    r.utility_type = pop.params.spec.utility_type;
    r.w = jr.at("w").get<std::vector<double>>();
    if (r.w.size() != k) throw ValidationError("respondent part-worth length does not match K");
    if (jr.contains("interaction_weights")) {
      auto iw = jr["interaction_weights"].get<std::vector<double>>();
      if (iw.size() != pop.params.pairs.size()) throw ValidationError("interaction weight count does not match pairs");
      for (std::size_t t = 0; t < iw.size(); ++t)
        r.interactions.push_back({pop.params.pairs[t].first, pop.params.pairs[t].second, iw[t]});
    }
    if (jr.contains("x")) r.x = jr["x"].get<std::vector<double>>();
    r.net = pop.params.net;
    pop.respondents.push_back(std::move(r));
  }
  return pop;
}

}  // namespace gbs

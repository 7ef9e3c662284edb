#pragma once

// Analytic identity suite behind `gbs verify`: Monte-Carlo unbiasedness of
// the gradient estimators against enumeration, closed-form choice-law
// identities, the differ-probability law and finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/evaluation.hpp"
#include "gbs/neural.hpp"
#include "gbs/respondent.hpp"

namespace gbs {

struct CheckResult {
  std::string name;
  bool passed = false;
  double observed = 0.0;
  double tolerance = 0.0;
  std::string detail;

  nlohmann::json to_json() const {
    return {{"name", name}, {"passed", passed}, {"observed", observed}, {"tolerance", tolerance}, {"detail", detail}};
  }

  std::string line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s  %-34s observed=%.4g tolerance=%.4g", passed ? "PASS" : "FAIL", name.c_str(), observed, tolerance);
    return std::string(buf) + (detail.empty() ? "" : "  (" + detail + ")");
  }
};

struct VerifyOptions {
  std::uint64_t seed = 20240611;
  std::size_t mc_draws = 1'000'000;
  std::size_t identity_triples = 1000;
  std::size_t differ_draws = 1'000'000;
  std::size_t k = 4;
  std::size_t population = 20;
};

// Per-logit estimate from one paired choice; the production path is gbs_gradient.
using PairedGradientFn = std::function<std::vector<double>(Choice, std::span<const double>)>;

inline PairedGradientFn default_paired_gradient() {
  return [](Choice y, std::span<const double> u) { return gbs_gradient(y, u, u.size()).g; };
}

namespace detail {

struct UnbiasednessFixture {
  Population pop;
  ProductProfile z0;
  PolicyLogits phi;
  std::vector<double> table;                  // pbar(Z beats z0)
  std::vector<std::vector<double>> utility;   // per respondent, per profile index
  std::vector<double> exact;
};

inline UnbiasednessFixture make_fixture(const VerifyOptions& o) {
  PopulationSpec spec;
  spec.k = o.k;
  spec.size = o.population;
  spec.utility_type = UtilityType::linear;
  spec.seed = derive_seed(o.seed, {0xF1});
  UnbiasednessFixture f;
  f.pop = generate_population(spec);
  Rng rng(derive_seed(o.seed, {0xF2}));
  f.z0 = ProductProfile::from_index(rng.index(std::uint64_t{1} << o.k), o.k);
  std::vector<double> phi(o.k);
  for (auto& p : phi) p = rng.normal(0.0, 1.0);
  f.phi = PolicyLogits(phi);
  f.table = win_probability_table(f.pop, f.z0);
  f.exact = exact_gradient(f.phi, f.table);
  for (const auto& r : f.pop.respondents) {
    std::vector<double> v(f.table.size());
    for (std::size_t idx = 0; idx < v.size(); ++idx) v[idx] = representative_utility(r, ProductProfile::from_index(idx, o.k));
    f.utility.push_back(std::move(v));
  }
  return f;
}

// Largest |mean - exact| / SE over coordinates.
inline CheckResult compare_mc(std::string name, const std::vector<double>& sum, const std::vector<double>& sumsq, std::size_t m,
                              const std::vector<double>& exact) {
  CheckResult res;
  res.name = std::move(name);
  res.tolerance = 3.0;
  const double n = static_cast<double>(m);
  for (std::size_t j = 0; j < exact.size(); ++j) {
    const double mean = sum[j] / n;
    const double var = std::max(sumsq[j] / n - mean * mean, 0.0);
    const double se = std::sqrt(var / n);
    const double z = se > 0.0 ? std::abs(mean - exact[j]) / se : (mean == exact[j] ? 0.0 : INFINITY);
    res.observed = std::max(res.observed, z);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s%.5f/%.5f", j ? " " : "mc/exact ", mean, exact[j]);
    res.detail += buf;
  }
  res.passed = res.observed <= res.tolerance;
  return res;
}

inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace detail

// Score-function estimator with the exact inner expectation over choices:
// h(u) = [pbar(Z1 beats z0) - pbar(Z2 beats z0)] (u - 1/2).
inline CheckResult check_score_function_unbiasedness(const VerifyOptions& o = {}) {
  const auto f = detail::make_fixture(o);
  Rng rng(derive_seed(o.seed, {0xF3}));
  std::vector<double> sum(o.k, 0.0), sumsq(o.k, 0.0);
  for (std::size_t m = 0; m < o.mc_draws; ++m) {
    const auto q = sample_question(f.phi, rng);
    const double w = f.table[q.z1.index()] - f.table[q.z2.index()];
    const auto g = score_function_gradient(Choice::first, Choice::second, q.u).g;
    for (std::size_t j = 0; j < o.k; ++j) {
      const double h = w * g[j];
      sum[j] += h;
      sumsq[j] += h * h;
    }
  }
  return detail::compare_mc("score_function_unbiasedness", sum, sumsq, o.mc_draws, f.exact);
}

// Paired-choice estimator, marginalised over the choice and weighted by the
// probability that the two baseline comparisons disagree. Its mean is the
// exact gradient only if the per-logit estimate has the right form and sign.
inline CheckResult check_paired_unbiasedness(const VerifyOptions& o = {}, const PairedGradientFn& grad = default_paired_gradient()) {
  const auto f = detail::make_fixture(o);
  Rng rng(derive_seed(o.seed, {0xF4}));
  const std::size_t z0 = f.z0.index();
  const double n = static_cast<double>(f.pop.size());
  std::vector<double> sum(o.k, 0.0), sumsq(o.k, 0.0), h(o.k);
  for (std::size_t m = 0; m < o.mc_draws; ++m) {
    const auto q = sample_question(f.phi, rng);
    const auto g1 = grad(Choice::first, q.u);
    const auto g2 = grad(Choice::second, q.u);
    const std::size_t i1 = q.z1.index(), i2 = q.z2.index();
    std::fill(h.begin(), h.end(), 0.0);
    for (const auto& v : f.utility) {
      const double a1 = sigmoid(v[i1] - v[z0]);
      const double a2 = sigmoid(v[i2] - v[z0]);
      const double p_disagree = a1 * (1.0 - a2) + (1.0 - a1) * a2;
      const double p_first = sigmoid(v[i1] - v[i2]);
      for (std::size_t j = 0; j < o.k; ++j) h[j] += p_disagree * (p_first * g1[j] + (1.0 - p_first) * g2[j]) / n;
    }
    for (std::size_t j = 0; j < o.k; ++j) {
      sum[j] += h[j];
      sumsq[j] += h[j] * h[j];
    }
  }
  return detail::compare_mc("paired_estimator_unbiasedness", sum, sumsq, o.mc_draws, f.exact);
}

// With S = Y(Z1,Z0) - Y(Z2,Z0) from independent logit choices,
// P(S = 1 | S != 0) = exp(V1) / (exp(V1) + exp(V2)).
inline CheckResult check_conditional_choice_law(const VerifyOptions& o = {}) {
  Rng rng(derive_seed(o.seed, {0xF5}));
  CheckResult res{"conditional_choice_law", false, 0.0, 1e-12, ""};
  for (std::size_t t = 0; t < o.identity_triples; ++t) {
    const double v0 = rng.uniform(-5.0, 5.0), v1 = rng.uniform(-5.0, 5.0), v2 = rng.uniform(-5.0, 5.0);
    const double a1 = sigmoid(v1 - v0), a2 = sigmoid(v2 - v0);
    const double conditional = a1 * (1.0 - a2) / (a1 * (1.0 - a2) + (1.0 - a1) * a2);
    const double softmax = std::exp(v1) / (std::exp(v1) + std::exp(v2));
    res.observed = std::max(res.observed, std::abs(conditional - softmax));
  }
  res.detail = std::to_string(o.identity_triples) + " triples";
  res.passed = res.observed <= res.tolerance;
  return res;
}

// [a1 - a2](u - 1/2) = (2 P(Y(Z1,Z2)=1) - 1)(u - 1/2) P(A | u) for fixed u.
inline CheckResult check_marginalization_identity(const VerifyOptions& o = {}) {
  Rng rng(derive_seed(o.seed, {0xF6}));
  CheckResult res{"per_u_marginalization_identity", false, 0.0, 1e-12, ""};
  for (std::size_t t = 0; t < o.identity_triples; ++t) {
    const double v0 = rng.uniform(-5.0, 5.0), v1 = rng.uniform(-5.0, 5.0), v2 = rng.uniform(-5.0, 5.0);
    const double a1 = sigmoid(v1 - v0), a2 = sigmoid(v2 - v0);
    const double p_disagree = a1 * (1.0 - a2) + (1.0 - a1) * a2;
    const double p_first = sigmoid(v1 - v2);
    std::vector<double> u(o.k);
    for (auto& x : u) x = rng.uniform();
    const auto g = marginalized_gradient(p_first, p_disagree, u).g;
    for (std::size_t j = 0; j < o.k; ++j) res.observed = std::max(res.observed, std::abs((a1 - a2) * (u[j] - 0.5) - g[j]));
  }
  res.detail = std::to_string(o.identity_triples) + " triples";
  res.passed = res.observed <= res.tolerance;
  return res;
}

// P(z1_k != z2_k) = 1 - |2 pi_k - 1|; all five pi values share one question.
inline CheckResult check_differ_probability(const VerifyOptions& o = {}) {
  const std::vector<double> pis{0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<double> phi;
  for (double p : pis) phi.push_back(std::log(p / (1.0 - p)));
  const PolicyLogits logits(phi);
  Rng rng(derive_seed(o.seed, {0xF7}));
  std::vector<std::size_t> differ(pis.size(), 0);
  for (std::size_t m = 0; m < o.differ_draws; ++m) {
    const auto q = sample_question(logits, rng);
    for (std::size_t j = 0; j < pis.size(); ++j) differ[j] += q.z1.bits[j] != q.z2.bits[j];
  }
  CheckResult res{"differ_probability", false, 0.0, 4.0 * std::sqrt(0.25 / static_cast<double>(o.differ_draws)), ""};
  for (std::size_t j = 0; j < pis.size(); ++j) {
    const double freq = static_cast<double>(differ[j]) / static_cast<double>(o.differ_draws);
    res.observed = std::max(res.observed, std::abs(freq - (1.0 - std::abs(2.0 * pis[j] - 1.0))));
    char buf[48];
    std::snprintf(buf, sizeof buf, "%spi=%.2f:%.4f", j ? " " : "", pis[j], freq);
    res.detail += buf;
  }
  res.passed = res.observed <= res.tolerance;
  return res;
}

// Central differences of upstream . f(x) against backprop, over several
// shapes and activations.
inline CheckResult check_backward_fd(const VerifyOptions& o = {}) {
  struct Shape {
    std::vector<int> dims;
    Activation act;
  };
  const std::vector<Shape> shapes{{{4, 8, 8, 1}, Activation::tanh},
                                  {{4, 8, 8, 1}, Activation::relu},
                                  {{3, 5, 2}, Activation::identity},
                                  {{6, 16, 16, 4}, Activation::relu},
                                  {{2, 3, 3, 3}, Activation::tanh}};
  Rng rng(derive_seed(o.seed, {0xF8}));
  const double h = 1e-5;
  CheckResult res{"backward_finite_difference", false, 0.0, 1e-6, ""};
  std::size_t checked = 0;
  for (const auto& s : shapes) {
    Mlp net = Mlp::random(s.dims, s.act, rng);
    std::vector<double> params = net.parameters();
    for (auto& p : params) p += rng.normal(0.0, 0.1);  // nonzero biases too
    net.set_parameters(params);
    Eigen::VectorXd x(s.dims.front()), up(s.dims.back());
    for (auto& v : x) v = rng.normal(0.0, 1.0);
    for (auto& v : up) v = rng.normal(0.0, 1.0);
    const auto analytic = Mlp::flatten(net.backward(x, up));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto shifted = params;
      shifted[p] = params[p] + h;
      net.set_parameters(shifted);
      const double fp = up.dot(net.forward(x));
      shifted[p] = params[p] - h;
      net.set_parameters(shifted);
      const double fm = up.dot(net.forward(x));
      res.observed = std::max(res.observed, detail::relative_error(analytic[p], (fp - fm) / (2.0 * h)));
      ++checked;
    }
    net.set_parameters(params);
  }
  res.detail = std::to_string(checked) + " parameters, relative error floor 1e-4";
  res.passed = res.observed <= res.tolerance;
  return res;
}

// Central differences of the enumerated objective against exact_gradient.
inline CheckResult check_exact_gradient_fd(const VerifyOptions& o = {}) {
  const double h = 1e-6;
  CheckResult res{"exact_gradient_finite_difference", false, 0.0, 1e-6, ""};
  std::size_t checked = 0;
  const UtilityType types[] = {UtilityType::linear, UtilityType::pairwise, UtilityType::network};
  for (std::size_t trial = 0; trial < 6; ++trial) {
    PopulationSpec spec;
    spec.k = 2 + trial % 4;
    spec.size = 5;
    spec.utility_type = types[trial % 3];
    spec.seed = derive_seed(o.seed, {0xF9, trial});
    const auto pop = generate_population(spec);
    Rng rng(derive_seed(o.seed, {0xFA, trial}));
    const auto z0 = ProductProfile::from_index(rng.index(std::uint64_t{1} << spec.k), spec.k);
    std::vector<double> phi(spec.k);
    for (auto& p : phi) p = rng.normal(0.0, 1.0);
    const auto table = win_probability_table(pop, z0);
    const auto g = exact_gradient(PolicyLogits(phi), table);
    for (std::size_t j = 0; j < spec.k; ++j) {
      auto plus = phi, minus = phi;
      plus[j] += h;
      minus[j] -= h;
      const double fd = (exact_objective(PolicyLogits(plus), table) - exact_objective(PolicyLogits(minus), table)) / (2.0 * h);
      res.observed = std::max(res.observed, detail::relative_error(g[j], fd));
      ++checked;
    }
  }
  res.detail = std::to_string(checked) + " coordinates, relative error floor 1e-4";
  res.passed = res.observed <= res.tolerance;
  return res;
}

inline std::vector<CheckResult> run_identity_suite(const VerifyOptions& o = {}, const PairedGradientFn& grad = default_paired_gradient()) {
  return {check_score_function_unbiasedness(o), check_paired_unbiasedness(o, grad), check_conditional_choice_law(o),
          check_marginalization_identity(o),   check_differ_probability(o),         check_backward_fd(o),
          check_exact_gradient_fd(o)};
}

inline bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

}  // namespace gbs

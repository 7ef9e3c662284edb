#pragma once

// Bernoulli product-distribution policy, paired-question generation and the
// antithetic gradient estimators that drive the adaptive survey.

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gbs/error.hpp"
#include "gbs/random.hpp"

namespace gbs {

// Numerically stable logistic function; safe for |x| far beyond 500.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without cancellation.
inline double log_sigmoid(double x) noexcept {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

/// A product as K binary attributes.
struct ProductProfile {
  std::vector<std::uint8_t> bits;

  ProductProfile() = default;
  explicit ProductProfile(std::size_t k) : bits(k, 0) {}
  explicit ProductProfile(std::vector<std::uint8_t> b) : bits(std::move(b)) {
    for (auto v : bits)
      if (v > 1) throw ValidationError("product profile entries must be 0 or 1");
  }
  ProductProfile(std::initializer_list<int> b) {
    bits.reserve(b.size());
    for (int v : b) {
      if (v != 0 && v != 1) throw ValidationError("product profile entries must be 0 or 1");
      bits.push_back(static_cast<std::uint8_t>(v));
    }
  }

  std::size_t size() const noexcept { return bits.size(); }
  std::uint8_t operator[](std::size_t k) const { return bits[k]; }
  bool operator==(const ProductProfile&) const = default;

  // Profile index with bits[0] as the most significant bit; matches the
  // lexicographic enumeration order used by the exhaustive oracles.
  std::uint64_t index() const noexcept {
    std::uint64_t idx = 0;
    for (auto b : bits) idx = (idx << 1) | b;
    return idx;
  }

  static ProductProfile from_index(std::uint64_t idx, std::size_t k) {
    ProductProfile p(k);
    for (std::size_t j = 0; j < k; ++j) p.bits[k - 1 - j] = static_cast<std::uint8_t>((idx >> j) & 1U);
    return p;
  }

  std::string to_string() const {
    std::string s;
    s.reserve(bits.size());
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
  }
};

/// Unconstrained logits phi; the policy is pi = sigmoid(phi) coordinatewise.
struct PolicyLogits {
  std::vector<double> phi;

  PolicyLogits() = default;
  explicit PolicyLogits(std::vector<double> v) : phi(std::move(v)) {
    for (double x : phi)
      if (!std::isfinite(x)) throw ConfigError("policy logits must be finite");
  }
  PolicyLogits(std::initializer_list<double> v) : PolicyLogits(std::vector<double>(v)) {}

  std::size_t size() const noexcept { return phi.size(); }
  double operator[](std::size_t k) const { return phi[k]; }

  std::vector<double> probabilities() const {
    std::vector<double> pi(phi.size());
    for (std::size_t k = 0; k < phi.size(); ++k) pi[k] = sigmoid(phi[k]);
    return pi;
  }

  bool operator==(const PolicyLogits&) const = default;

  // phi_k ~ Normal(0, sd^2) i.i.d.
  static PolicyLogits random(std::size_t k, Rng& rng, double sd = 0.05) {
    std::vector<double> v(k);
    for (auto& x : v) x = rng.normal(0.0, sd);
    return PolicyLogits(std::move(v));
  }
};

enum class Choice : std::uint8_t { second = 0, first = 1 };

inline int as_int(Choice c) noexcept { return static_cast<int>(c); }
inline Choice choice_from_int(int y) {
  if (y != 0 && y != 1) throw ValidationError("choice must be 0 or 1");
  return y == 1 ? Choice::first : Choice::second;
}

/// One uniform draw u and the two partial profiles derived from it.
struct PairedQuestion {
  std::vector<double> u;
  ProductProfile z1;
  ProductProfile z2;
  std::uint64_t step = 0;

  bool identical() const { return z1 == z2; }
};

enum class EstimatorKind { score_function, marginalized, gbs };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::score_function: return "ScoreFunction";
    case EstimatorKind::marginalized: return "Marginalized";
    case EstimatorKind::gbs: return "GBS";
  }
  return "unknown";
}

struct GradientEstimate {
  std::vector<double> g;
  EstimatorKind kind = EstimatorKind::gbs;
};

// z1_k = 1[u_k > sigma(-phi_k)], z2_k = 1[u_k < sigma(phi_k)].
inline PairedQuestion make_question(const PolicyLogits& logits, std::vector<double> u, std::uint64_t step = 0) {
  const std::size_t k = logits.size();
  if (u.size() != k) throw ConfigError("uniform draw length does not match K");
  PairedQuestion q;
  q.z1 = ProductProfile(k);
  q.z2 = ProductProfile(k);
  for (std::size_t j = 0; j < k; ++j) {
    q.z1.bits[j] = u[j] > sigmoid(-logits.phi[j]) ? 1 : 0;
    q.z2.bits[j] = u[j] < sigmoid(logits.phi[j]) ? 1 : 0;
  }
  q.u = std::move(u);
  q.step = step;
  return q;
}

inline PairedQuestion sample_question(const PolicyLogits& logits, Rng& rng, std::uint64_t step = 0) {
  std::vector<double> u(logits.size());
  for (auto& x : u) x = rng.uniform();
  return make_question(logits, std::move(u), step);
}

// g_k = (2y - 1)(u_k - 1/2).
inline GradientEstimate gbs_gradient(Choice choice, std::span<const double> u, std::size_t k) {
  if (u.size() != k) {
    std::ostringstream msg;
    msg << "gbs_gradient: u has length " << u.size() << " but K = " << k;
    throw ConfigError(msg.str());
  }
  const double sign = choice == Choice::first ? 1.0 : -1.0;
  GradientEstimate est{std::vector<double>(k), EstimatorKind::gbs};
  for (std::size_t j = 0; j < k; ++j) est.g[j] = sign * (u[j] - 0.5);
  return est;
}

inline GradientEstimate gbs_gradient(Choice choice, const PairedQuestion& q) {
  return gbs_gradient(choice, q.u, q.u.size());
}

// Score-function form with a fixed baseline: g_k = (y1 - y2)(u_k - 1/2), where
// y1 is the choice of Z1(u) over Z0 and y2 the choice of Z2(u) over Z0.
// Verification only; the survey loop never asks against a baseline.
inline GradientEstimate score_function_gradient(Choice y1, Choice y2, std::span<const double> u) {
  const double diff = static_cast<double>(as_int(y1) - as_int(y2));
  GradientEstimate est{std::vector<double>(u.size()), EstimatorKind::score_function};
  for (std::size_t j = 0; j < u.size(); ++j) est.g[j] = diff * (u[j] - 0.5);
  return est;
}

// Choice-marginalised form weighted by the disagreement probability:
// g_k = (2 P(Y(Z1,Z2)=1) - 1)(u_k - 1/2) P(A | u). Needs the choice model, so
// it is only used to verify the paired estimator.
inline GradientEstimate marginalized_gradient(double p_first, double p_disagree, std::span<const double> u) {
  GradientEstimate est{std::vector<double>(u.size()), EstimatorKind::marginalized};
  for (std::size_t j = 0; j < u.size(); ++j) est.g[j] = (2.0 * p_first - 1.0) * (u[j] - 0.5) * p_disagree;
  return est;
}

// Gradient ascent step phi' = phi + eta * g.
inline PolicyLogits sgd_update(const PolicyLogits& logits, const GradientEstimate& grad, double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("stepsize must be finite and non-negative");
  if (grad.g.size() != logits.size()) throw ConfigError("gradient length does not match K");
  std::vector<double> next(logits.phi);
  for (std::size_t j = 0; j < next.size(); ++j) {
    next[j] += eta * grad.g[j];
    if (!std::isfinite(next[j])) {
      std::ostringstream msg;
      msg << "sgd_update produced non-finite logit at k=" << j << " (phi=" << logits.phi[j]
          << ", g=" << grad.g[j] << ", eta=" << eta << ")";
      throw DivergenceError(msg.str());
    }
  }
  PolicyLogits out;
  out.phi = std::move(next);
  return out;
}

// bits_k = 1[phi_k > 0]; phi_k == 0 resolves to 0.
inline ProductProfile extract_product(const PolicyLogits& logits) {
  ProductProfile p(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) p.bits[j] = logits.phi[j] > 0.0 ? 1 : 0;
  return p;
}

}  // namespace gbs

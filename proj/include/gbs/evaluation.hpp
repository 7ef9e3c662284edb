#pragma once

// Ground-truth oracles: exact objective and gradient by enumeration,
// hold-out utility and brute-force product ranking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "gbs/core.hpp"
#include "gbs/respondent.hpp"

namespace gbs {

inline constexpr std::size_t kMaxEnumerationK = 20;

inline void require_enumerable(std::size_t k, const char* what) {
  if (k > kMaxEnumerationK) {
    std::ostringstream msg;
    msg << what << ": enumeration infeasible for K = " << k << " (limit " << kMaxEnumerationK << ")";
    throw InfeasibleError(msg.str());
  }
}

// pbar(Z beats z0) for every profile Z in index order, averaged over the population.
inline std::vector<double> win_probability_table(const Population& pop, const ProductProfile& z0) {
  const std::size_t k = pop.k();
  require_enumerable(k, "win_probability_table");
  const std::size_t n = std::size_t{1} << k;
  std::vector<double> table(n, 0.0);
  for (const auto& r : pop.respondents) {
    const double v0 = representative_utility(r, z0);
    for (std::size_t idx = 0; idx < n; ++idx)
      table[idx] += sigmoid(representative_utility(r, ProductProfile::from_index(idx, k)) - v0);
  }
  for (auto& t : table) t /= static_cast<double>(pop.size());
  return table;
}

// Probability of profile `idx` under independent Bernoulli(pi_k).
inline double profile_mass(std::uint64_t idx, std::span<const double> pi) {
  const std::size_t k = pi.size();
  double p = 1.0;
  for (std::size_t j = 0; j < k; ++j) {
    const bool bit = (idx >> (k - 1 - j)) & 1U;
    p *= bit ? pi[j] : 1.0 - pi[j];
  }
  return p;
}

// V(phi) = sum_Z p(Z; sigma(phi)) pbar(Z beats z0), from a precomputed table.
inline double exact_objective(const PolicyLogits& phi, std::span<const double> table) {
  const auto pi = phi.probabilities();
  double v = 0.0;
  for (std::size_t idx = 0; idx < table.size(); ++idx) v += profile_mass(idx, pi) * table[idx];
  return v;
}

inline double exact_objective(const PolicyLogits& phi, const Population& pop, const ProductProfile& z0) {
  if (phi.size() != pop.k()) throw ConfigError("logits length does not match population K");
  return exact_objective(phi, win_probability_table(pop, z0));
}

// dV/dphi_k = sigma(phi_k) sigma(-phi_k) * E_{z_-k}[f(z_k = 1) - f(z_k = 0)].
inline std::vector<double> exact_gradient(const PolicyLogits& phi, std::span<const double> table) {
  const std::size_t k = phi.size();
  if (table.size() != (std::size_t{1} << k)) throw ConfigError("win table size does not match K");
  const auto pi = phi.probabilities();
  std::vector<double> grad(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const std::uint64_t bit = std::uint64_t{1} << (k - 1 - j);
    double diff = 0.0;
    for (std::uint64_t idx = 0; idx < table.size(); ++idx) {
      if (idx & bit) continue;
      // Mass of the remaining coordinates: divide out coordinate j's factor.
      double rest = 1.0;
      for (std::size_t m = 0; m < k; ++m) {
        if (m == j) continue;
        const bool b = (idx >> (k - 1 - m)) & 1U;
        rest *= b ? pi[m] : 1.0 - pi[m];
      }
      diff += rest * (table[idx | bit] - table[idx]);
    }
    grad[j] = sigmoid(phi.phi[j]) * sigmoid(-phi.phi[j]) * diff;
  }
  return grad;
}

inline std::vector<double> exact_gradient(const PolicyLogits& phi, const Population& pop, const ProductProfile& z0) {
  if (phi.size() != pop.k()) throw ConfigError("logits length does not match population K");
  require_enumerable(pop.k(), "exact_gradient");
  return exact_gradient(phi, win_probability_table(pop, z0));
}

// Mean representative utility over a population. Types 1 and 2 are linear in
// their parameters, so the mean over respondents is the utility of the
// parameter-averaged respondent; type 3 respondents share one network.
class MeanUtility {
 public:
  explicit MeanUtility(const Population& pop) : k_(pop.k()), type_(pop.params.spec.utility_type) {
    if (pop.size() == 0) throw ConfigError("mean utility of an empty population");
    const double n = static_cast<double>(pop.size());
    if (type_ == UtilityType::network) {
      net_ = pop.params.net;
      if (!net_) throw ConfigError("network population has no shared network");
      return;
    }
    w_.assign(k_, 0.0);
    for (const auto& r : pop.respondents)
      for (std::size_t j = 0; j < k_; ++j) w_[j] += r.w[j] / n;
    if (type_ == UtilityType::pairwise) {
      for (const auto& [a, b] : pop.params.pairs) interactions_.push_back({a, b, 0.0});
      for (const auto& r : pop.respondents) {
        if (r.interactions.size() != interactions_.size()) throw ConfigError("respondents do not share the interaction pairs");
        for (std::size_t t = 0; t < interactions_.size(); ++t) interactions_[t].weight += r.interactions[t].weight / n;
      }
    }
  }

  std::size_t k() const { return k_; }

  double operator()(const ProductProfile& z) const {
    if (z.size() != k_) throw ConfigError("profile length does not match population K");
    if (net_) {
      Eigen::VectorXd x(static_cast<Eigen::Index>(k_));
      for (std::size_t j = 0; j < k_; ++j) x(static_cast<Eigen::Index>(j)) = z.bits[j];
      return net_->forward(x)(0);
    }
    double v = 0.0;
    for (std::size_t j = 0; j < k_; ++j)
      if (z.bits[j]) v += w_[j];
    for (const auto& t : interactions_)
      if (z.bits[t.a] && z.bits[t.b]) v += t.weight;
    return v;
  }

  // Utilities of all 2^K profiles in index order.
  std::vector<double> table() const {
    require_enumerable(k_, "utility table");
    const std::size_t n = std::size_t{1} << k_;
    std::vector<double> out(n);
    if (net_) {
      Eigen::MatrixXd x(static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(n));
      for (std::size_t idx = 0; idx < n; ++idx)
        for (std::size_t j = 0; j < k_; ++j)
          x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(idx)) = (idx >> (k_ - 1 - j)) & 1U;
      const Eigen::MatrixXd y = net_->forward_batch(x);
      for (std::size_t idx = 0; idx < n; ++idx) out[idx] = y(0, static_cast<Eigen::Index>(idx));
      return out;
    }
    for (std::size_t idx = 0; idx < n; ++idx) out[idx] = (*this)(ProductProfile::from_index(idx, k_));
    return out;
  }

 private:
  std::size_t k_;
  UtilityType type_;
  std::vector<double> w_;
  std::vector<Interaction> interactions_;
  std::shared_ptr<const Mlp> net_;
};

inline double test_utility(const ProductProfile& product, const Population& test_pop) {
  return MeanUtility(test_pop)(product);
}

// Personalised products: mean over respondents of V_i(policy(X_i)).
inline double test_utility(const std::function<ProductProfile(const RespondentModel&)>& policy, const Population& test_pop) {
  if (test_pop.size() == 0) throw ConfigError("empty test population");
  double total = 0.0;
  for (const auto& r : test_pop.respondents) total += representative_utility(r, policy(r));
  return total / static_cast<double>(test_pop.size());
}

// 1-based rank of `value` among `table` sorted descending; ties share the better rank.
inline std::size_t rank_in_table(double value, std::span<const double> table) {
  std::size_t better = 0;
  for (double v : table)
    if (v > value) ++better;
  return better + 1;
}

inline std::size_t product_rank(const ProductProfile& product, std::span<const double> utility_table) {
  if (utility_table.size() != (std::size_t{1} << product.size())) throw ConfigError("utility table size does not match K");
  return rank_in_table(utility_table[product.index()], utility_table);
}

inline std::size_t product_rank(const ProductProfile& product, const Population& test_pop) {
  require_enumerable(test_pop.k(), "product_rank");
  const auto table = MeanUtility(test_pop).table();
  return product_rank(product, table);
}

// Profile with the highest value in a table; the first (lexicographically
// smallest) profile wins ties.
inline ProductProfile argmax_profile(std::span<const double> table, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t idx = 1; idx < table.size(); ++idx)
    if (table[idx] > table[best]) best = idx;
  return ProductProfile::from_index(best, k);
}

}  // namespace gbs

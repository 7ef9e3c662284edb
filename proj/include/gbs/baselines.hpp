#pragma once

// Comparison methods fitted on non-adaptive paired-choice data: pooled
// logistic MLE, hierarchical Bayes MAP, NN utility and NN-ind.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/evaluation.hpp"
#include "gbs/neural.hpp"
#include "gbs/respondent.hpp"

namespace gbs {

struct ChoiceRecord {
  std::size_t respondent_id = 0;
  ProductProfile z1;
  ProductProfile z2;
  Choice y = Choice::second;
};

struct PairedChoiceDataset {
  std::size_t k = 0;
  std::vector<ChoiceRecord> records;
  std::map<std::size_t, std::vector<double>> covariates;

  void validate() const {
    for (const auto& r : records)
      if (r.z1.size() != k || r.z2.size() != k) throw ValidationError("choice record profile length does not match K");
  }

  void require_covariates() const {
    for (const auto& r : records)
      if (!covariates.contains(r.respondent_id))
        throw ValidationError("missing covariates for respondent " + std::to_string(r.respondent_id));
  }
};

// Non-adaptive design: each profile's bits are i.i.d. Bernoulli(0.5), drawn
// independently for z1 and z2.
inline PairedChoiceDataset collect_random_pair_data(const Population& pop, std::size_t questions_per_respondent, Rng& rng) {
  PairedChoiceDataset data;
  data.k = pop.k();
  data.records.reserve(pop.size() * questions_per_respondent);
  for (const auto& r : pop.respondents) {
    for (std::size_t j = 0; j < questions_per_respondent; ++j) {
      ProductProfile z1(data.k), z2(data.k);
      for (auto& b : z1.bits) b = rng.uniform() < 0.5 ? 1 : 0;
      for (auto& b : z2.bits) b = rng.uniform() < 0.5 ? 1 : 0;
      const Choice y = answer(r, z1, z2, rng);
      data.records.push_back({r.id, std::move(z1), std::move(z2), y});
    }
    if (!r.x.empty()) data.covariates[r.id] = r.x;
  }
  return data;
}

inline ProductProfile positive_part(const Eigen::VectorXd& v) {
  ProductProfile p(static_cast<std::size_t>(v.size()));
  for (Eigen::Index j = 0; j < v.size(); ++j) p.bits[static_cast<std::size_t>(j)] = v(j) > 0.0 ? 1 : 0;
  return p;
}

namespace detail {

// Rows are z1 - z2; signs are +1 for y = 1 and -1 for y = 0.
inline void design_matrix(const std::vector<const ChoiceRecord*>& recs, std::size_t k, Eigen::MatrixXd& d, Eigen::VectorXd& s) {
  d.resize(static_cast<Eigen::Index>(recs.size()), static_cast<Eigen::Index>(k));
  s.resize(static_cast<Eigen::Index>(recs.size()));
  for (std::size_t r = 0; r < recs.size(); ++r) {
    for (std::size_t j = 0; j < k; ++j)
      d(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = double(recs[r]->z1.bits[j]) - double(recs[r]->z2.bits[j]);
    s(static_cast<Eigen::Index>(r)) = recs[r]->y == Choice::first ? 1.0 : -1.0;
  }
}

// sum_r log sigmoid(s_r * w . d_r)
inline double logit_loglik(const Eigen::MatrixXd& d, const Eigen::VectorXd& s, const Eigen::VectorXd& w) {
  const Eigen::VectorXd margin = s.cwiseProduct(d * w);
  double ll = 0.0;
  for (Eigen::Index r = 0; r < margin.size(); ++r) ll += log_sigmoid(margin(r));
  return ll;
}

// Gradient and curvature weights sigma(1 - sigma) of the logit log-likelihood.
inline Eigen::VectorXd logit_grad(const Eigen::MatrixXd& d, const Eigen::VectorXd& s, const Eigen::VectorXd& w, Eigen::VectorXd& curv) {
  const Eigen::VectorXd margin = s.cwiseProduct(d * w);
  Eigen::VectorXd coef(margin.size());
  curv.resize(margin.size());
  for (Eigen::Index r = 0; r < margin.size(); ++r) {
    const double p = sigmoid(margin(r));
    coef(r) = s(r) * (1.0 - p);
    curv(r) = p * (1.0 - p);
  }
  return d.transpose() * coef;
}

}  // namespace detail

// ---- Logistic -------------------------------------------------------------

struct LogisticConfig {
  double l2 = 1e-4;
  std::size_t max_iterations = 200;
  double tolerance = 1e-9;
};

struct LogisticFit {
  Eigen::VectorXd w;
  ProductProfile product;
  std::size_t iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"method", "logistic"},
            {"W_hat", std::vector<double>(w.data(), w.data() + w.size())},
            {"product", product.bits},
            {"iterations", iterations},
            {"converged", converged},
            {"gradient_norm", gradient_norm}};
  }
};

// Pooled logit MLE with an L2 penalty, maximised by damped Newton ascent.
inline LogisticFit fit_logistic(const PairedChoiceDataset& data, const LogisticConfig& cfg = {}) {
  data.validate();
  if (data.records.empty()) throw ValidationError("logistic fit needs at least one record");
  const std::size_t k = data.k;
  std::vector<const ChoiceRecord*> recs;
  for (const auto& r : data.records) recs.push_back(&r);
  Eigen::MatrixXd d;
  Eigen::VectorXd s;
  detail::design_matrix(recs, k, d, s);

  auto objective = [&](const Eigen::VectorXd& w) { return detail::logit_loglik(d, s, w) - 0.5 * cfg.l2 * w.squaredNorm(); };

  LogisticFit fit;
  fit.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  double f = objective(fit.w);
  for (fit.iterations = 0; fit.iterations < cfg.max_iterations; ++fit.iterations) {
    Eigen::VectorXd curv;
    Eigen::VectorXd g = detail::logit_grad(d, s, fit.w, curv) - cfg.l2 * fit.w;
    fit.gradient_norm = g.norm();
    if (fit.gradient_norm <= cfg.tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd h = d.transpose() * curv.asDiagonal() * d;
    h.diagonal().array() += cfg.l2;
    Eigen::VectorXd step = h.ldlt().solve(g);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      Eigen::VectorXd cand = fit.w + t * step;
      const double fc = objective(cand);
      if (fc >= f + 1e-4 * t * g.dot(step)) {
        fit.w = std::move(cand);
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!fit.converged) {
    Eigen::VectorXd curv;
    fit.gradient_norm = (detail::logit_grad(d, s, fit.w, curv) - cfg.l2 * fit.w).norm();
    fit.converged = fit.gradient_norm <= std::max(cfg.tolerance, 1e-6);
  }
  fit.product = positive_part(fit.w);
  return fit;
}

// ---- Hierarchical Bayes MAP ----------------------------------------------

struct HbConfig {
  double prior_variance_m = 1.0;  // m ~ N(0, v_m I)
  double prior_variance_w = 1.0;  // w_i | m ~ N(m, v_w I)
  std::size_t max_iterations = 200;
  double tolerance = 1e-8;

  nlohmann::json to_json() const {
    return {{"optimizer", "newton-schur"},
            {"prior_variance_m", prior_variance_m},
            {"prior_variance_w", prior_variance_w},
            {"max_iterations", max_iterations},
            {"tolerance", tolerance}};
  }
};

struct HbFit {
  Eigen::VectorXd m;
  std::map<std::size_t, Eigen::VectorXd> w;
  ProductProfile product;
  std::size_t iterations = 0;
  bool converged = false;
  bool warning = false;  // iteration cap reached before the tolerance
  double gradient_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"method", "hb"},
            {"m_hat", std::vector<double>(m.data(), m.data() + m.size())},
            {"product", product.bits},
            {"iterations", iterations},
            {"converged", converged},
            {"warning", warning},
            {"gradient_norm", gradient_norm}};
  }
};

/// Joint MAP of the mixed-logit hierarchy
///   m ~ N(0, I),  w_i | m ~ N(m, I),  P(y = 1) = sigmoid(w_i . (z1 - z2)).
///
/// Damped Newton ascent over (m, w_1..w_N). The Hessian is block-arrow
/// shaped, so each step eliminates the respondent blocks and solves a K x K
/// Schur system for m.
inline HbFit fit_hb_map(const PairedChoiceDataset& data, const HbConfig& cfg = {}) {
  data.validate();
  if (!(cfg.prior_variance_m > 0.0) || !(cfg.prior_variance_w > 0.0)) throw ConfigError("prior variances must be positive");
  const auto k = static_cast<Eigen::Index>(data.k);
  const double pm = 1.0 / cfg.prior_variance_m;
  const double pw = 1.0 / cfg.prior_variance_w;

  struct Block {
    std::size_t id;
    Eigen::MatrixXd d;
    Eigen::VectorXd s;
  };
  std::vector<Block> blocks;
  {
    std::map<std::size_t, std::vector<const ChoiceRecord*>> by_resp;
    for (const auto& r : data.records) by_resp[r.respondent_id].push_back(&r);
    for (auto& [id, recs] : by_resp) {
      Block b{id, {}, {}};
      detail::design_matrix(recs, data.k, b.d, b.s);
      blocks.push_back(std::move(b));
    }
  }
  const std::size_t n = blocks.size();

  HbFit fit;
  fit.m = Eigen::VectorXd::Zero(k);
  std::vector<Eigen::VectorXd> w(n, Eigen::VectorXd::Zero(k));

  auto log_post = [&](const Eigen::VectorXd& m, const std::vector<Eigen::VectorXd>& ws) {
    double lp = -0.5 * pm * m.squaredNorm();
    for (std::size_t i = 0; i < n; ++i) lp += -0.5 * pw * (ws[i] - m).squaredNorm() + detail::logit_loglik(blocks[i].d, blocks[i].s, ws[i]);
    return lp;
  };

  auto gradients = [&](const Eigen::VectorXd& m, const std::vector<Eigen::VectorXd>& ws, Eigen::VectorXd& gm,
                       std::vector<Eigen::VectorXd>& gw, std::vector<Eigen::VectorXd>& curv) {
    gm = -pm * m;
    gw.resize(n);
    curv.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      gm += pw * (ws[i] - m);
      gw[i] = -pw * (ws[i] - m) + detail::logit_grad(blocks[i].d, blocks[i].s, ws[i], curv[i]);
    }
  };

  auto joint_norm = [&](const Eigen::VectorXd& gm, const std::vector<Eigen::VectorXd>& gw) {
    double s2 = gm.squaredNorm();
    for (const auto& g : gw) s2 += g.squaredNorm();
    return std::sqrt(s2);
  };

  double f = log_post(fit.m, w);
  Eigen::VectorXd gm;
  std::vector<Eigen::VectorXd> gw, curv;
  for (fit.iterations = 0; fit.iterations < cfg.max_iterations; ++fit.iterations) {
    gradients(fit.m, w, gm, gw, curv);
    fit.gradient_norm = joint_norm(gm, gw);
    if (fit.gradient_norm <= cfg.tolerance) {
      fit.converged = true;
      break;
    }
    // Inverse of each respondent block A_i = pw I + D^T C D.
    std::vector<Eigen::MatrixXd> inv(n);
    Eigen::MatrixXd schur = Eigen::MatrixXd::Identity(k, k) * (pm + pw * static_cast<double>(n));
    Eigen::VectorXd rhs = gm;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = blocks[i].d;
      if (d.rows() >= k) {
        Eigen::MatrixXd a = d.transpose() * curv[i].asDiagonal() * d;
        a.diagonal().array() += pw;
        inv[i] = a.llt().solve(Eigen::MatrixXd::Identity(k, k));
      } else {
        // Woodbury with B = C^{1/2} D: A^{-1} = (I - B^T (pw I + B B^T)^{-1} B) / pw.
        const Eigen::MatrixXd b = curv[i].cwiseSqrt().asDiagonal() * d;
        Eigen::MatrixXd small = b * b.transpose();
        small.diagonal().array() += pw;
        inv[i] = (Eigen::MatrixXd::Identity(k, k) - b.transpose() * small.llt().solve(b)) / pw;
      }
      schur -= pw * pw * inv[i];
      rhs += pw * inv[i] * gw[i];
    }
    const Eigen::VectorXd dm = schur.llt().solve(rhs);
    std::vector<Eigen::VectorXd> dw(n);
    for (std::size_t i = 0; i < n; ++i) dw[i] = inv[i] * (gw[i] + pw * dm);

    double slope = gm.dot(dm);
    for (std::size_t i = 0; i < n; ++i) slope += gw[i].dot(dw[i]);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      Eigen::VectorXd m2 = fit.m + t * dm;
      std::vector<Eigen::VectorXd> w2(n);
      for (std::size_t i = 0; i < n; ++i) w2[i] = w[i] + t * dw[i];
      const double f2 = log_post(m2, w2);
      if (f2 >= f + 1e-4 * t * slope) {
        fit.m = std::move(m2);
        w = std::move(w2);
        f = f2;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!fit.converged) {
    gradients(fit.m, w, gm, gw, curv);
    fit.gradient_norm = joint_norm(gm, gw);
    fit.converged = fit.gradient_norm <= std::max(cfg.tolerance, 1e-6);
  }
  fit.warning = !fit.converged;
  for (std::size_t i = 0; i < n; ++i) fit.w[blocks[i].id] = w[i];
  fit.product = positive_part(fit.m);
  return fit;
}

// ---- NN utility -------------------------------------------------------------

struct NnConfig {
  int hidden = 64;
  bool standardize_covariates = true;  // NN-ind only
  FitConfig fit{};

  nlohmann::json to_json() const {
    auto j = fit.to_json();
    j["hidden"] = hidden;
    j["activation"] = "relu";
    return j;
  }
};

struct NnUtilityFit {
  Mlp net;
  ProductProfile product;
  std::vector<double> epoch_loss;

  nlohmann::json to_json() const { return {{"method", "nn"}, {"product", product.bits}, {"network", net.to_json()}}; }
};

inline Eigen::MatrixXd all_profiles_matrix(std::size_t k) {
  require_enumerable(k, "all_profiles_matrix");
  const std::size_t n = std::size_t{1} << k;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  for (std::size_t idx = 0; idx < n; ++idx)
    for (std::size_t j = 0; j < k; ++j) x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(idx)) = (idx >> (k - 1 - j)) & 1U;
  return x;
}

// Exhaustive argmax of a scalar network over {0,1}^K.
inline ProductProfile argmax_network(const Mlp& net, std::size_t k) {
  require_enumerable(k, "NN utility argmax");
  const Eigen::MatrixXd y = net.forward_batch(all_profiles_matrix(k));
  std::vector<double> table(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index c = 0; c < y.cols(); ++c) table[static_cast<std::size_t>(c)] = y(0, c);
  return argmax_profile(table, k);
}

inline Mlp make_fitted_net(int in, int hidden, int out, std::uint64_t seed) {
  Rng rng(seed);
  return Mlp::random({in, hidden, hidden, out}, Activation::relu, rng, 2.0);
}

inline void set_profile_column(Eigen::MatrixXd& x, Eigen::Index col, const ProductProfile& z) {
  for (std::size_t j = 0; j < z.size(); ++j) x(static_cast<Eigen::Index>(j), col) = z.bits[j];
}

// f_gamma fitted by MLE on P(y = 1) = sigmoid(f(z1) - f(z2)); product = argmax f.
inline NnUtilityFit fit_nn_utility(const PairedChoiceDataset& data, const NnConfig& cfg = {}, std::optional<Mlp> init = std::nullopt) {
  require_enumerable(data.k, "NN utility baseline");
  data.validate();
  if (data.records.empty()) throw ValidationError("NN utility fit needs at least one record");
  const int k = static_cast<int>(data.k);
  Mlp net = init ? std::move(*init) : make_fitted_net(k, cfg.hidden, 1, derive_seed(cfg.fit.seed, {0x4e4e}));
  auto fitted = train_minibatch(std::move(net), data.records.size(), cfg.fit,
                                [&](const Mlp& m, std::span<const std::size_t> idx, MlpGradients& grads) {
                                  const auto b = static_cast<Eigen::Index>(idx.size());
                                  Eigen::MatrixXd x(k, 2 * b);
                                  for (Eigen::Index c = 0; c < b; ++c) {
                                    const auto& r = data.records[idx[static_cast<std::size_t>(c)]];
                                    set_profile_column(x, c, r.z1);
                                    set_profile_column(x, b + c, r.z2);
                                  }
                                  auto cache = m.forward_cached(x);
                                  Eigen::MatrixXd up(1, 2 * b);
                                  double loss = 0.0;
                                  for (Eigen::Index c = 0; c < b; ++c) {
                                    double dl = 0.0;
                                    const int y = as_int(data.records[idx[static_cast<std::size_t>(c)]].y);
                                    loss += bce_with_logit(cache.output(0, c) - cache.output(0, b + c), y, dl);
                                    up(0, c) = dl;
                                    up(0, b + c) = -dl;
                                  }
                                  grads = m.backward(cache, up);
                                  return loss;
                                });
  NnUtilityFit out;
  out.product = argmax_network(fitted.net, data.k);
  out.net = std::move(fitted.net);
  out.epoch_loss = std::move(fitted.epoch_loss);
  return out;
}

// ---- NN-ind -----------------------------------------------------------------

struct NnIndFit {
  Mlp net;
  FeatureScaler input;
  std::vector<double> epoch_loss;

  // 1[f_gamma(X) > 0]
  ProductProfile policy(std::span<const double> x) const {
    const Eigen::VectorXd f = net.forward(input.apply(x));
    return positive_part(f);
  }

  nlohmann::json to_json() const {
    return {{"method", "nn-ind"}, {"network", net.to_json()}, {"input_scaler", input.empty() ? nlohmann::json(nullptr) : input.to_json()}};
  }
};

// f_gamma: R^d -> R^K fitted by MLE on P(y = 1) = sigmoid((z1 - z2) . f(X_i)).
inline NnIndFit fit_nn_ind(const PairedChoiceDataset& data, const NnConfig& cfg = {}, std::optional<Mlp> init = std::nullopt) {
  data.validate();
  if (data.records.empty()) throw ValidationError("NN-ind fit needs at least one record");
  data.require_covariates();
  const auto k = static_cast<Eigen::Index>(data.k);
  const auto d = static_cast<int>(data.covariates.begin()->second.size());
  for (const auto& [id, x] : data.covariates)
    if (static_cast<int>(x.size()) != d) throw ValidationError("covariate length differs for respondent " + std::to_string(id));
  Mlp net = init ? std::move(*init) : make_fitted_net(d, cfg.hidden, static_cast<int>(k), derive_seed(cfg.fit.seed, {0x1d1d}));
  if (net.input_dim() != d || net.output_dim() != k) throw ConfigError("NN-ind network shape does not match data");
  FeatureScaler scaler;
  if (cfg.standardize_covariates) {
    std::vector<std::vector<double>> rows;
    for (const auto& [id, x] : data.covariates) rows.push_back(x);
    scaler = FeatureScaler::fit(rows);
  }
  std::map<std::size_t, Eigen::VectorXd> scaled;
  for (const auto& [id, x] : data.covariates) scaled[id] = scaler.apply(x);
  auto fitted = train_minibatch(std::move(net), data.records.size(), cfg.fit,
                                [&](const Mlp& m, std::span<const std::size_t> idx, MlpGradients& grads) {
                                  const auto b = static_cast<Eigen::Index>(idx.size());
                                  Eigen::MatrixXd x(d, b), diff(k, b);
                                  for (Eigen::Index c = 0; c < b; ++c) {
                                    const auto& r = data.records[idx[static_cast<std::size_t>(c)]];
                                    x.col(c) = scaled.at(r.respondent_id);
                                    for (Eigen::Index j = 0; j < k; ++j)
                                      diff(j, c) = double(r.z1.bits[static_cast<std::size_t>(j)]) - double(r.z2.bits[static_cast<std::size_t>(j)]);
                                  }
                                  auto cache = m.forward_cached(x);
                                  Eigen::MatrixXd up(k, b);
                                  double loss = 0.0;
                                  for (Eigen::Index c = 0; c < b; ++c) {
                                    double dl = 0.0;
                                    const int y = as_int(data.records[idx[static_cast<std::size_t>(c)]].y);
                                    loss += bce_with_logit(diff.col(c).dot(cache.output.col(c)), y, dl);
                                    up.col(c) = dl * diff.col(c);
                                  }
                                  grads = m.backward(cache, up);
                                  return loss;
                                });
  return {std::move(fitted.net), std::move(scaler), std::move(fitted.epoch_loss)};
}

}  // namespace gbs

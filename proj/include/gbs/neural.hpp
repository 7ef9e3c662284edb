#pragma once

// Small dense feedforward networks: forward pass, exact reverse-mode
// gradients and a mini-batch SGD trainer for logistic choice losses.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/error.hpp"
#include "gbs/random.hpp"

namespace gbs {

enum class Activation { identity, tanh, relu };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "'");
}

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Parameter gradients laid out like the network, plus the input gradient.
struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  Eigen::MatrixXd input;  // in x batch

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weight) s += w.squaredNorm();
    for (const auto& b : bias) s += b.squaredNorm();
    return s;
  }
};

namespace detail {

inline void activate(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::identity: break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::relu: m = m.cwiseMax(0.0); break;
  }
}

// Derivative expressed through the pre-activation values.
inline Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& pre) {
  switch (a) {
    case Activation::identity: return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
    case Activation::tanh: return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
  }
  return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
}

}  // namespace detail

/// Multilayer perceptron with a shared hidden activation and identity output.
///
/// Inputs are column vectors; the batch routines take one sample per column.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
    Eigen::MatrixXd output;
  };

  Mlp() = default;

  // Zero-initialised network with the given layer widths.
  Mlp(std::vector<int> dims, Activation hidden) : dims_(std::move(dims)), hidden_(hidden) {
    if (dims_.size() < 2) throw ConfigError("an MLP needs at least input and output dimensions");
    for (int d : dims_)
      if (d < 1) throw ConfigError("layer dimensions must be positive");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
      layers_.push_back({Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]), Eigen::VectorXd::Zero(dims_[l + 1])});
  }

  // Weights i.i.d. Normal(0, gain / fan_in), biases zero. The last layer is
  // additionally multiplied by output_scale.
  static Mlp random(std::vector<int> dims, Activation hidden, Rng& rng, double gain = 1.0, double output_scale = 1.0) {
    Mlp net(std::move(dims), hidden);
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
      auto& w = net.layers_[l].weight;
      const double sd = std::sqrt(gain / static_cast<double>(w.cols()));
      const double scale = l + 1 == net.layers_.size() ? output_scale : 1.0;
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * rng.normal(0.0, sd);
    }
    return net;
  }

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::vector<int>& dims() const { return dims_; }
  Activation hidden_activation() const { return hidden_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const {
    check_input(x.rows());
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd pre = layers_[l].weight * h;
      pre.colwise() += layers_[l].bias;
      if (l + 1 < layers_.size()) detail::activate(hidden_, pre);
      h = std::move(pre);
    }
    return h;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const { return forward_batch(x); }

  Eigen::VectorXd forward(std::span<const double> x) const {
    return forward(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
  }

  Cache forward_cached(const Eigen::MatrixXd& x) const {
    check_input(x.rows());
    Cache c;
    c.inputs.reserve(layers_.size());
    c.pre.reserve(layers_.size());
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd pre = layers_[l].weight * h;
      pre.colwise() += layers_[l].bias;
      c.inputs.push_back(std::move(h));
      h = pre;
      if (l + 1 < layers_.size()) detail::activate(hidden_, h);
      c.pre.push_back(std::move(pre));
    }
    c.output = std::move(h);
    return c;
  }

  // Gradients of sum_columns <upstream_col, net(x_col)>, summed over the batch.
  MlpGradients backward(const Cache& cache, const Eigen::MatrixXd& upstream) const {
    if (upstream.rows() != output_dim() || upstream.cols() != cache.output.cols())
      throw ConfigError("upstream gradient shape does not match network output");
    MlpGradients g;
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
    Eigen::MatrixXd delta = upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size())
        delta = delta.cwiseProduct(detail::activation_derivative(hidden_, cache.pre[l]));
      g.weight[l] = delta * cache.inputs[l].transpose();
      g.bias[l] = delta.rowwise().sum();
      delta = layers_[l].weight.transpose() * delta;
    }
    g.input = std::move(delta);
    return g;
  }

  MlpGradients backward_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& upstream) const {
    return backward(forward_cached(x), upstream);
  }

  MlpGradients backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const {
    return backward(forward_cached(x), upstream);
  }

  // theta += step * grad
  void apply(const MlpGradients& grad, double step) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight.noalias() += step * grad.weight[l];
      layers_[l].bias.noalias() += step * grad.bias[l];
    }
  }

  MlpGradients zero_gradients() const {
    MlpGradients g;
    for (const auto& l : layers_) {
      g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
    return g;
  }

  // Flat parameter access in layer order (weights row-major, then bias).
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) p.push_back(l.weight(r, c));
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) p.push_back(l.bias(r));
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw ConfigError("parameter vector length mismatch");
    std::size_t i = 0;
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p[i++];
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = p[i++];
    }
  }

  static std::vector<double> flatten(const MlpGradients& g) {
    std::vector<double> p;
    for (std::size_t l = 0; l < g.weight.size(); ++l) {
      for (Eigen::Index r = 0; r < g.weight[l].rows(); ++r)
        for (Eigen::Index c = 0; c < g.weight[l].cols(); ++c) p.push_back(g.weight[l](r, c));
      for (Eigen::Index r = 0; r < g.bias[l].size(); ++r) p.push_back(g.bias[l](r));
    }
    return p;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["layer_dims"] = dims_;
    j["hidden_activation"] = to_string(hidden_);
    j["output_activation"] = "identity";
    auto weights = nlohmann::json::array();
    auto biases = nlohmann::json::array();
    for (const auto& l : layers_) {
      std::vector<double> w;
      w.reserve(static_cast<std::size_t>(l.weight.size()));
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
      weights.push_back(w);
      biases.push_back(std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size()));
    }
    j["weights"] = weights;
    j["biases"] = biases;
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp net(j.at("layer_dims").get<std::vector<int>>(), activation_from_string(j.at("hidden_activation")));
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() != net.layers_.size() || biases.size() != net.layers_.size())
      throw ValidationError("network JSON: layer count does not match layer_dims");
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
      auto w = weights[l].get<std::vector<double>>();
      auto b = biases[l].get<std::vector<double>>();
      auto& layer = net.layers_[l];
      if (w.size() != static_cast<std::size_t>(layer.weight.size()) || b.size() != static_cast<std::size_t>(layer.bias.size()))
        throw ValidationError("network JSON: array size does not match layer_dims");
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
          layer.weight(r, c) = w[static_cast<std::size_t>(r * layer.weight.cols() + c)];
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = b[static_cast<std::size_t>(r)];
    }
    if (!net.all_finite()) throw ValidationError("network JSON contains non-finite parameters");
    return net;
  }

 private:
  void check_input(Eigen::Index rows) const {
    if (layers_.empty()) throw ConfigError("network has no layers");
    if (rows != dims_.front()) {
      std::ostringstream msg;
      msg << "network input has dimension " << rows << ", expected " << dims_.front();
      throw ConfigError(msg.str());
    }
  }

  std::vector<int> dims_;
  Activation hidden_ = Activation::relu;
  std::vector<DenseLayer> layers_;
};

// Per-feature affine standardisation (x - mean) / scale applied before a network.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const { return mean.empty(); }

  static FeatureScaler fit(const std::vector<std::vector<double>>& rows) {
    FeatureScaler s;
    if (rows.empty()) return s;
    const std::size_t d = rows.front().size();
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 0.0);
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j] / n;
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) s.scale[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]) / n;
    for (auto& v : s.scale) v = v > 1e-24 ? std::sqrt(v) : 1.0;
    return s;
  }

  Eigen::VectorXd apply(std::span<const double> x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(x.size()));
    for (std::size_t j = 0; j < x.size(); ++j)
      out(static_cast<Eigen::Index>(j)) = empty() ? x[j] : (x[j] - mean[j]) / scale[j];
    return out;
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"scale", scale}}; }

  static FeatureScaler from_json(const nlohmann::json& j) {
    FeatureScaler s;
    if (j.is_null()) return s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.scale = j.at("scale").get<std::vector<double>>();
    if (s.mean.size() != s.scale.size()) throw ValidationError("feature scaler arrays differ in length");
    return s;
  }
};

struct FitConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  bool full_batch = false;

  nlohmann::json to_json() const {
    return {{"optimizer", "sgd"},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"seed", seed},
            {"full_batch", full_batch}};
  }
};

struct FitResult {
  Mlp net;
  std::vector<double> epoch_loss;  // mean loss per epoch, measured during the pass
};

// Mini-batch gradient descent on a mean loss. `batch_loss(net, indices, grads)`
// must return the summed loss over `indices` and accumulate the summed
// gradient into `grads` (initialised to zero).
template <class BatchLoss>
FitResult train_minibatch(Mlp net, std::size_t n, const FitConfig& cfg, BatchLoss&& batch_loss) {
  if (n == 0) throw ValidationError("cannot fit on an empty dataset");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  const std::size_t batch = cfg.full_batch ? n : std::max<std::size_t>(1, std::min(cfg.batch_size, n));
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  FitResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (!cfg.full_batch) std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      MlpGradients grads = net.zero_gradients();
      const double loss = batch_loss(static_cast<const Mlp&>(net), idx, grads);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch << ", batch starting at " << start;
        throw DivergenceError(msg.str());
      }
      total += loss;
      net.apply(grads, -cfg.learning_rate / static_cast<double>(idx.size()));
    }
    result.epoch_loss.push_back(total / static_cast<double>(n));
    if (!net.all_finite()) {
      std::ostringstream msg;
      msg << "training diverged: non-finite parameters after epoch " << epoch;
      throw DivergenceError(msg.str());
    }
  }
  result.net = std::move(net);
  return result;
}

// Binary cross-entropy of sigmoid(logit) against y, and its derivative in the logit.
inline double bce_with_logit(double logit, int y, double& dlogit) {
  dlogit = sigmoid(logit) - static_cast<double>(y);
  return y == 1 ? -log_sigmoid(logit) : -log_sigmoid(-logit);
}

struct LabeledFeature {
  Eigen::VectorXd x;
  int label = 0;
};

// Minimises mean BCE of sigmoid(net(x)[0]) against the labels.
inline FitResult fit_logistic_choice(Mlp net, const std::vector<LabeledFeature>& data, const FitConfig& cfg) {
  if (data.empty()) throw ValidationError("cannot fit on an empty dataset");
  if (net.output_dim() != 1) throw ConfigError("logistic fit needs a scalar-output network");
  return train_minibatch(std::move(net), data.size(), cfg,
                         [&](const Mlp& m, std::span<const std::size_t> idx, MlpGradients& grads) {
                           Eigen::MatrixXd x(m.input_dim(), static_cast<Eigen::Index>(idx.size()));
                           for (std::size_t b = 0; b < idx.size(); ++b) x.col(static_cast<Eigen::Index>(b)) = data[idx[b]].x;
                           auto cache = m.forward_cached(x);
                           Eigen::MatrixXd up(1, x.cols());
                           double loss = 0.0;
                           for (Eigen::Index b = 0; b < x.cols(); ++b) {
                             double d = 0.0;
                             loss += bce_with_logit(cache.output(0, b), data[idx[static_cast<std::size_t>(b)]].label, d);
                             up(0, b) = d;
                           }
                           grads = m.backward(cache, up);
                           return loss;
                         });
}

}  // namespace gbs

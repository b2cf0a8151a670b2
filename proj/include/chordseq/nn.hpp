#pragma once

// Minimal dense-network engine: fully connected layers with ReLU or linear
// activations, inverted dropout after hidden layers, MSE and grouped
// softmax cross-entropy losses, backpropagation and ADAM.
//
// Activations are column-major batches: one column per example.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "chordseq/errors.hpp"
#include "chordseq/random.hpp"

namespace chordseq::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, Linear };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "linear"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "linear") return Activation::Linear;
  throw InvalidConfig("unknown activation '" + s + "'");
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Linear;

  std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

struct LayerSpec {
  int out = 0;
  Activation activation = Activation::Linear;
};

class DenseNet {
public:
  DenseNet() = default;

  // Glorot-uniform weights, zero biases.
  DenseNet(int input_size, const std::vector<LayerSpec>& specs, double dropout_rate, Rng& rng)
      : dropout_rate_(dropout_rate) {
    if (input_size <= 0 || specs.empty()) throw DimensionMismatch("empty network");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InvalidConfig("dropout must be in [0, 1)");
    int in = input_size;
    for (const auto& spec : specs) {
      if (spec.out <= 0) throw DimensionMismatch("layer width must be positive");
      DenseLayer layer;
      const double limit = std::sqrt(6.0 / static_cast<double>(in + spec.out));
      layer.weight.resize(spec.out, in);
      // column-major fill order is part of the reproducibility contract
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = rng.uniform(-limit, limit);
      }
      layer.bias = Vector::Zero(spec.out);
      layer.activation = spec.activation;
      layers_.push_back(std::move(layer));
      in = spec.out;
    }
  }

  explicit DenseNet(std::vector<DenseLayer> layers, double dropout_rate = 0.0)
      : layers_(std::move(layers)), dropout_rate_(dropout_rate) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].bias.size() != layers_[i].weight.rows()) throw DimensionMismatch("bias/weight rows differ");
      if (i > 0 && layers_[i].weight.cols() != layers_[i - 1].weight.rows()) {
        throw DimensionMismatch("layer " + std::to_string(i) + " input does not chain");
      }
    }
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  double dropout_rate() const { return dropout_rate_; }
  void set_dropout_rate(double rate) { dropout_rate_ = rate; }

  Eigen::Index input_size() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
  Eigen::Index output_size() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    if (a.layers_.size() != b.layers_.size() || a.dropout_rate_ != b.dropout_rate_) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
          x.weight != y.weight || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }

private:
  std::vector<DenseLayer> layers_;
  double dropout_rate_ = 0.0;
};

enum class Mode { Train, Eval };

struct ForwardCache {
  std::vector<Matrix> inputs;  // input seen by each layer (after dropout of the previous one)
  std::vector<Matrix> pre;     // pre-activations
  std::vector<Matrix> masks;   // scaled dropout mask on each layer's output; empty when unused
};

// Dropout is applied to the output of every layer but the last, in training
// mode only. `rng` may be null in eval mode.
inline Matrix forward(const DenseNet& net, const Matrix& input, Mode mode, Rng* rng, ForwardCache* cache = nullptr) {
  if (input.rows() != net.input_size()) {
    throw DimensionMismatch("input has " + std::to_string(input.rows()) + " rows, network expects " +
                            std::to_string(net.input_size()));
  }
  const bool dropout = mode == Mode::Train && net.dropout_rate() > 0.0;
  if (dropout && rng == nullptr) throw InvalidConfig("training-mode dropout needs a random source");
  const double keep = 1.0 - net.dropout_rate();
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->masks.clear();
  }
  Matrix x = input;
  const auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& layer = layers[li];
    Matrix z = layer.weight * x;
    z.colwise() += layer.bias;
    Matrix a = layer.activation == Activation::Relu ? Matrix(z.cwiseMax(0.0)) : z;
    Matrix mask;
    if (dropout && li + 1 < layers.size()) {
      mask.resize(a.rows(), a.cols());
      for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = rng->uniform() < keep ? 1.0 / keep : 0.0;
      }
      a.array() *= mask.array();
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(z));
      cache->masks.push_back(std::move(mask));
    }
    x = std::move(a);
  }
  return x;
}

inline Vector forward(const DenseNet& net, const Vector& input, Mode mode, Rng* rng, ForwardCache* cache = nullptr) {
  Matrix out = forward(net, Matrix(input), mode, rng, cache);
  return out.col(0);
}

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;  // gradient with respect to the network input

  static Gradients zeros_like(const DenseNet& net) {
    Gradients g;
    for (const auto& l : net.layers()) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }
};

inline Gradients backward(const DenseNet& net, const ForwardCache& cache, const Matrix& output_grad) {
  const auto& layers = net.layers();
  if (cache.pre.size() != layers.size()) throw DimensionMismatch("cache does not match network");
  if (output_grad.rows() != net.output_size() || output_grad.cols() != cache.pre.back().cols()) {
    throw DimensionMismatch("output gradient shape does not match forward output");
  }
  Gradients g;
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());
  Matrix delta = output_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    if (cache.masks[li].size() != 0) delta.array() *= cache.masks[li].array();
    if (layer.activation == Activation::Relu) delta.array() *= (cache.pre[li].array() > 0.0).cast<double>();
    g.weight[li].noalias() = delta * cache.inputs[li].transpose();
    g.bias[li] = delta.rowwise().sum();
    Matrix next = layer.weight.transpose() * delta;
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { Mse, GroupedCrossEntropy };

struct LossSpec {
  LossKind kind = LossKind::Mse;
  Eigen::Index group_size = 1;
};

struct LossResult {
  double loss = 0.0;
  Matrix gradient;
};

// Softmax over consecutive blocks of `group_size` rows, per column.
inline Matrix grouped_softmax(const Matrix& logits, Eigen::Index group_size) {
  if (group_size <= 0 || logits.rows() % group_size != 0) {
    throw DimensionMismatch("output size " + std::to_string(logits.rows()) + " not divisible by group size " +
                            std::to_string(group_size));
  }
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    for (Eigen::Index g = 0; g < logits.rows(); g += group_size) {
      const auto block = logits.col(j).segment(g, group_size);
      const double m = block.maxCoeff();
      auto dst = out.col(j).segment(g, group_size);
      dst = (block.array() - m).exp().matrix();
      dst /= dst.sum();
    }
  }
  return out;
}

// Loss is averaged over the batch. MSE averages over every output entry;
// grouped cross-entropy averages -log p(target) over the groups.
inline LossResult loss_and_grad(const LossSpec& spec, const Matrix& output, const Matrix& target) {
  if (output.rows() != target.rows() || output.cols() != target.cols()) {
    throw DimensionMismatch("output and target shapes differ");
  }
  const auto batch = static_cast<double>(output.cols());
  LossResult r;
  if (spec.kind == LossKind::Mse) {
    const Matrix diff = output - target;
    const double n = static_cast<double>(output.size());
    r.loss = diff.squaredNorm() / n;
    r.gradient = diff * (2.0 / n);
    return r;
  }
  const Matrix probs = grouped_softmax(output, spec.group_size);
  const Eigen::Index groups = output.rows() / spec.group_size;
  double total = 0.0;
  for (Eigen::Index j = 0; j < target.cols(); ++j) {
    for (Eigen::Index g = 0; g < groups; ++g) {
      Eigen::Index hot = -1;
      for (Eigen::Index k = 0; k < spec.group_size; ++k) {
        const double t = target(g * spec.group_size + k, j);
        if (t == 1.0 && hot < 0) {
          hot = k;
        } else if (t != 0.0) {
          throw NonOneHotTarget("group " + std::to_string(g) + " of example " + std::to_string(j));
        }
      }
      if (hot < 0) throw NonOneHotTarget("group " + std::to_string(g) + " of example " + std::to_string(j));
      total -= std::log(probs(g * spec.group_size + hot, j));
    }
  }
  const double denom = static_cast<double>(groups) * batch;
  r.loss = total / denom;
  r.gradient = (probs - target) / denom;
  return r;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamState {
  long long step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<Vector> m_bias, v_bias;

  AdamState() = default;
  AdamState(const DenseNet& net, double lr) : learning_rate(lr) {
    for (const auto& l : net.layers()) {
      m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      m_bias.push_back(Vector::Zero(l.bias.size()));
      v_bias.push_back(Vector::Zero(l.bias.size()));
    }
  }
};

inline void adam_step(DenseNet& net, const Gradients& grads, AdamState& state) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size()) {
    throw DimensionMismatch("gradient/state layer count does not match network");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols() || m.rows() != param.rows() ||
        m.cols() != param.cols()) {
      throw DimensionMismatch("gradient shape does not match parameter");
    }
    m = state.beta1 * m + (1.0 - state.beta1) * grad;
    v = state.beta2 * v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
    param.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    update(layers[i].weight, grads.weight[i], state.m_weight[i], state.v_weight[i]);
    update(layers[i].bias, grads.bias[i], state.m_bias[i], state.v_bias[i]);
  }
}

// ---------------------------------------------------------------------------
// Serialization. nlohmann/json renders doubles with the shortest decimal
// form that parses back to the same bits, so round trips are exact.

inline nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json arch = nlohmann::json::array();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    arch.push_back({{"in", l.weight.cols()}, {"out", l.weight.rows()}, {"activation", to_string(l.activation)}});
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(l.weight.cols()));
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) row[static_cast<std::size_t>(j)] = l.weight(i, j);
      w.push_back(std::move(row));
    }
    layers.push_back({{"weight", std::move(w)}, {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"architecture", std::move(arch)}, {"dropout_rate", net.dropout_rate()}, {"layers", std::move(layers)}};
}

inline DenseNet dense_net_from_json(const nlohmann::json& j) {
  try {
    const auto& arch = j.at("architecture");
    const auto& layers_json = j.at("layers");
    if (arch.size() != layers_json.size()) throw DimensionMismatch("architecture and layer lists differ");
    std::vector<DenseLayer> layers;
    for (std::size_t li = 0; li < arch.size(); ++li) {
      const auto in = arch[li].at("in").get<Eigen::Index>();
      const auto out = arch[li].at("out").get<Eigen::Index>();
      DenseLayer l;
      l.activation = activation_from_string(arch[li].at("activation").get<std::string>());
      l.weight.resize(out, in);
      const auto& w = layers_json[li].at("weight");
      if (static_cast<Eigen::Index>(w.size()) != out) throw DimensionMismatch("weight rows");
      for (Eigen::Index i = 0; i < out; ++i) {
        const auto& row = w[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(row.size()) != in) throw DimensionMismatch("weight cols");
        for (Eigen::Index c = 0; c < in; ++c) l.weight(i, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
      const auto bias = layers_json[li].at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(bias.size()) != out) throw DimensionMismatch("bias size");
      l.bias = Eigen::Map<const Vector>(bias.data(), out);
      layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers), j.at("dropout_rate").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw DimensionMismatch(std::string("malformed network document: ") + e.what());
  }
}

}  // namespace chordseq::nn

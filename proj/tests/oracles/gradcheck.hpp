#pragma once

// Central finite-difference gradient checks for every network/loss wiring the
// predictors use. Dropout masks are frozen by replaying the same random
// stream for every loss evaluation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "chordseq/nn.hpp"

namespace oracles {

using chordseq::Rng;
namespace nn = chordseq::nn;

struct GradCheckResult {
  std::string name;
  int instantiations = 0;
  long long checked = 0;
  double max_relative_error = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic) + std::abs(numeric), 1e-7);
  return std::abs(analytic - numeric) / scale;
}

// `loss(nets, grads)` evaluates the loss; when grads is non-null it also fills
// one Gradients per net.
using LossFn = std::function<double(std::vector<nn::DenseNet>&, std::vector<nn::Gradients>*)>;

inline void check_all(std::vector<nn::DenseNet>& nets, const LossFn& loss, double h, GradCheckResult& r) {
  std::vector<nn::Gradients> grads;
  loss(nets, &grads);
  for (std::size_t n = 0; n < nets.size(); ++n) {
    for (std::size_t li = 0; li < nets[n].layers().size(); ++li) {
      const auto probe = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = loss(nets, nullptr);
        param = saved - h;
        const double down = loss(nets, nullptr);
        param = saved;
        r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic, (up - down) / (2.0 * h)));
        ++r.checked;
      };
      auto& layer = nets[n].layers()[li];
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) probe(layer.weight(i, j), grads[n].weight[li](i, j));
      }
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias(i), grads[n].bias[li](i));
    }
  }
}

inline nn::Matrix one_hot_targets(Eigen::Index groups, Eigen::Index group_size, Eigen::Index batch, Rng& rng) {
  nn::Matrix t = nn::Matrix::Zero(groups * group_size, batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index g = 0; g < groups; ++g) t(g * group_size + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(group_size))), j) = 1.0;
  }
  return t;
}

inline nn::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

inline nn::DenseNet small_net(int in, int hidden, int out, double dropout, Rng& rng) {
  using nn::Activation;
  nn::DenseNet net(in, {{hidden, Activation::Relu}, {hidden, Activation::Relu}, {out, Activation::Linear}}, dropout, rng);
  // non-zero biases so the bias paths are exercised away from the origin
  for (auto& l : net.layers()) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.1, 0.1);
  }
  return net;
}

// Encoder followed by decoder, trained end to end (MLP-ED and the
// aggregated-scale pretraining).
inline GradCheckResult check_encoder_decoder(nn::LossKind kind, double dropout, int instantiations, double h = 1e-5) {
  GradCheckResult r;
  r.name = std::string(kind == nn::LossKind::Mse ? "encoder-decoder/mse" : "encoder-decoder/grouped-xent") +
           (dropout > 0.0 ? "/dropout" : "");
  const Eigen::Index group = 4, groups = 3, batch = 5;
  for (int s = 0; s < instantiations; ++s) {
    Rng rng(1000 + static_cast<std::uint64_t>(s));
    std::vector<nn::DenseNet> nets{small_net(static_cast<int>(group * groups), 6, 3, dropout, rng),
                                   small_net(3, 6, static_cast<int>(group * groups), dropout, rng)};
    const nn::Matrix x = random_matrix(group * groups, batch, rng, 0.0, 2.0);
    const nn::Matrix t = kind == nn::LossKind::Mse ? random_matrix(group * groups, batch, rng, 0.0, 2.0)
                                                   : one_hot_targets(groups, group, batch, rng);
    const nn::LossSpec spec{kind, group};
    const std::uint64_t mask_seed = 77 + static_cast<std::uint64_t>(s);
    const LossFn loss = [&](std::vector<nn::DenseNet>& ns, std::vector<nn::Gradients>* grads) {
      Rng masks(mask_seed);
      const auto mode = dropout > 0.0 ? nn::Mode::Train : nn::Mode::Eval;
      nn::ForwardCache ce, cd;
      const nn::Matrix z = nn::forward(ns[0], x, mode, &masks, &ce);
      const nn::Matrix y = nn::forward(ns[1], z, mode, &masks, &cd);
      const auto l = nn::loss_and_grad(spec, y, t);
      if (grads) {
        const auto gd = nn::backward(ns[1], cd, l.gradient);
        const auto ge = nn::backward(ns[0], ce, gd.input);
        *grads = {ge, gd};
      }
      return l.loss;
    };
    check_all(nets, loss, h, r);
    ++r.instantiations;
  }
  return r;
}

// Scale-1 encoder whose code is concatenated with two frozen codes before
// the final decoder; only the encoder and decoder receive gradients.
inline GradCheckResult check_concatenated(double dropout, int instantiations, double h = 1e-5) {
  GradCheckResult r;
  r.name = std::string("multi-scale-concat/grouped-xent") + (dropout > 0.0 ? "/dropout" : "");
  const Eigen::Index group = 3, groups = 4, batch = 4, code = 2;
  for (int s = 0; s < instantiations; ++s) {
    Rng rng(5000 + static_cast<std::uint64_t>(s));
    std::vector<nn::DenseNet> nets{small_net(static_cast<int>(group * groups), 5, static_cast<int>(code), dropout, rng),
                                   small_net(static_cast<int>(3 * code), 5, static_cast<int>(group * groups), dropout, rng)};
    const nn::Matrix x = random_matrix(group * groups, batch, rng, 0.0, 1.0);
    const nn::Matrix z2 = random_matrix(code, batch, rng);
    const nn::Matrix z4 = random_matrix(code, batch, rng);
    const nn::Matrix t = one_hot_targets(groups, group, batch, rng);
    const nn::LossSpec spec{nn::LossKind::GroupedCrossEntropy, group};
    const std::uint64_t mask_seed = 91 + static_cast<std::uint64_t>(s);
    const LossFn loss = [&](std::vector<nn::DenseNet>& ns, std::vector<nn::Gradients>* grads) {
      Rng masks(mask_seed);
      const auto mode = dropout > 0.0 ? nn::Mode::Train : nn::Mode::Eval;
      nn::ForwardCache ce, cd;
      const nn::Matrix z1 = nn::forward(ns[0], x, mode, &masks, &ce);
      nn::Matrix joined(3 * code, batch);
      joined << z1, z2, z4;
      const nn::Matrix y = nn::forward(ns[1], joined, mode, &masks, &cd);
      const auto l = nn::loss_and_grad(spec, y, t);
      if (grads) {
        const auto gd = nn::backward(ns[1], cd, l.gradient);
        const auto ge = nn::backward(ns[0], ce, gd.input.topRows(code));
        *grads = {ge, gd};
      }
      return l.loss;
    };
    check_all(nets, loss, h, r);
    ++r.instantiations;
  }
  return r;
}

// Gradient with respect to the network input, single net.
inline GradCheckResult check_input_gradient(int instantiations, double h = 1e-5) {
  GradCheckResult r;
  r.name = "input-gradient/mse";
  for (int s = 0; s < instantiations; ++s) {
    Rng rng(9000 + static_cast<std::uint64_t>(s));
    const nn::DenseNet net = small_net(5, 6, 4, 0.0, rng);
    nn::Matrix x = random_matrix(5, 3, rng);
    const nn::Matrix t = random_matrix(4, 3, rng);
    const nn::LossSpec spec{nn::LossKind::Mse, 1};
    nn::ForwardCache c;
    const auto l = nn::loss_and_grad(spec, nn::forward(net, x, nn::Mode::Eval, nullptr, &c), t);
    const auto g = nn::backward(net, c, l.gradient);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double saved = x(i, j);
        x(i, j) = saved + h;
        const double up = nn::loss_and_grad(spec, nn::forward(net, x, nn::Mode::Eval, nullptr), t).loss;
        x(i, j) = saved - h;
        const double down = nn::loss_and_grad(spec, nn::forward(net, x, nn::Mode::Eval, nullptr), t).loss;
        x(i, j) = saved;
        r.max_relative_error = std::max(r.max_relative_error, relative_error(g.input(i, j), (up - down) / (2.0 * h)));
        ++r.checked;
      }
    }
    ++r.instantiations;
  }
  return r;
}

inline std::vector<GradCheckResult> gradient_suite(int instantiations = 5) {
  return {check_encoder_decoder(nn::LossKind::GroupedCrossEntropy, 0.0, instantiations),
          check_encoder_decoder(nn::LossKind::GroupedCrossEntropy, 0.5, instantiations),
          check_encoder_decoder(nn::LossKind::Mse, 0.0, instantiations),
          check_encoder_decoder(nn::LossKind::Mse, 0.5, instantiations),
          check_concatenated(0.0, instantiations),
          check_concatenated(0.5, instantiations),
          check_input_gradient(instantiations)};
}

}  // namespace oracles

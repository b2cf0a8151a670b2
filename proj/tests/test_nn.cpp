#include <gtest/gtest.h>

#include <cmath>

#include "chordseq/nn.hpp"
#include "oracles/gradcheck.hpp"

using namespace chordseq;

TEST(Gradients, FiniteDifferenceSuite) {
  for (const auto& r : oracles::gradient_suite(5)) {
    EXPECT_EQ(r.instantiations, 5) << r.name;
    EXPECT_GT(r.checked, 0) << r.name;
    EXPECT_LT(r.max_relative_error, 1e-4) << r.name;
  }
}

TEST(Forward, DimensionMismatch) {
  Rng rng(1);
  const nn::DenseNet net(4, {{3, nn::Activation::Linear}}, 0.0, rng);
  EXPECT_THROW(nn::forward(net, nn::Matrix(nn::Matrix::Zero(5, 1)), nn::Mode::Eval, nullptr), DimensionMismatch);
  EXPECT_EQ(net.parameter_count(), 15u);
}

TEST(Forward, DropoutOnlyInTraining) {
  Rng init(2);
  const nn::DenseNet net(4, {{50, nn::Activation::Relu}, {2, nn::Activation::Linear}}, 0.5, init);
  const nn::Matrix x = nn::Matrix::Ones(4, 3);
  const nn::Matrix a = nn::forward(net, x, nn::Mode::Eval, nullptr);
  const nn::Matrix b = nn::forward(net, x, nn::Mode::Eval, nullptr);
  EXPECT_EQ(a, b);
  Rng r1(3), r2(3);
  nn::ForwardCache c;
  const nn::Matrix t1 = nn::forward(net, x, nn::Mode::Train, &r1, &c);
  const nn::Matrix t2 = nn::forward(net, x, nn::Mode::Train, &r2);
  EXPECT_EQ(t1, t2);
  EXPECT_NE(t1, a);
  // inverted dropout: kept units are scaled by 1 / keep
  ASSERT_EQ(c.masks.size(), 2u);
  for (Eigen::Index i = 0; i < c.masks[0].size(); ++i) {
    const double m = c.masks[0](i);
    EXPECT_TRUE(m == 0.0 || m == 2.0);
  }
  EXPECT_EQ(c.masks[1].size(), 0);
  EXPECT_THROW(nn::forward(net, x, nn::Mode::Train, nullptr), InvalidConfig);
}

TEST(Losses, SoftmaxRowsSumToOne) {
  Rng rng(4);
  const nn::Matrix logits = oracles::random_matrix(25 * 8, 6, rng, -20.0, 20.0);
  const nn::Matrix p = nn::grouped_softmax(logits, 25);
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    for (Eigen::Index g = 0; g < 8; ++g) EXPECT_NEAR(p.col(j).segment(g * 25, 25).sum(), 1.0, 1e-12);
  }
  EXPECT_THROW(nn::grouped_softmax(logits, 7), DimensionMismatch);
}

TEST(Losses, ClosedForms) {
  // uniform logits over 25 classes: cross-entropy ln 25
  const nn::Matrix zeros = nn::Matrix::Zero(50, 3);
  Rng rng(5);
  const nn::Matrix t = oracles::one_hot_targets(2, 25, 3, rng);
  EXPECT_NEAR(nn::loss_and_grad({nn::LossKind::GroupedCrossEntropy, 25}, zeros, t).loss, std::log(25.0), 1e-12);

  nn::Matrix y(2, 1), target(2, 1);
  y << 1.0, 3.0;
  target << 0.0, 1.0;
  const auto mse = nn::loss_and_grad({nn::LossKind::Mse, 1}, y, target);
  EXPECT_DOUBLE_EQ(mse.loss, (1.0 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(mse.gradient(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(mse.gradient(1, 0), 2.0);

  nn::Matrix bad = nn::Matrix::Zero(50, 3);
  bad(0, 0) = 0.5;
  EXPECT_THROW(nn::loss_and_grad({nn::LossKind::GroupedCrossEntropy, 25}, zeros, bad), NonOneHotTarget);
}

// With a constant gradient, bias-corrected ADAM moves each parameter by
// lr * sign(g) per step (up to epsilon).
TEST(Adam, ConstantGradientStepSize) {
  Rng rng(6);
  nn::DenseNet net(3, {{2, nn::Activation::Linear}}, 0.0, rng);
  const nn::DenseNet start = net;
  nn::AdamState state(net, 1e-3);
  auto g = nn::Gradients::zeros_like(net);
  g.weight[0] << 0.5, -2.0, 1e-2, -3.0, 4.0, -0.25;
  g.bias[0] << 1.0, -1.0;
  const int steps = 10000;
  for (int i = 0; i < steps; ++i) nn::adam_step(net, g, state);
  const nn::Matrix moved = net.layers()[0].weight - start.layers()[0].weight;
  for (Eigen::Index i = 0; i < moved.size(); ++i) {
    const double expected = -1e-3 * steps * (g.weight[0](i) > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(moved(i), expected, std::abs(expected) * 0.01);
  }
  EXPECT_NEAR(net.layers()[0].bias(0) - start.layers()[0].bias(0), -10.0, 0.1);
}

TEST(Adam, ReducesLossOnRegression) {
  Rng rng(7);
  nn::DenseNet net(4, {{16, nn::Activation::Relu}, {2, nn::Activation::Linear}}, 0.0, rng);
  const nn::Matrix x = oracles::random_matrix(4, 32, rng);
  nn::Matrix t(2, 32);
  t.row(0) = x.row(0) + x.row(1);
  t.row(1) = x.row(2).cwiseAbs();
  nn::AdamState state(net, 1e-2);
  const nn::LossSpec spec{nn::LossKind::Mse, 1};
  const double before = nn::loss_and_grad(spec, nn::forward(net, x, nn::Mode::Eval, nullptr), t).loss;
  for (int i = 0; i < 500; ++i) {
    nn::ForwardCache c;
    const auto l = nn::loss_and_grad(spec, nn::forward(net, x, nn::Mode::Eval, nullptr, &c), t);
    nn::adam_step(net, nn::backward(net, c, l.gradient), state);
  }
  const double after = nn::loss_and_grad(spec, nn::forward(net, x, nn::Mode::Eval, nullptr), t).loss;
  EXPECT_LT(after, before * 0.1);
}

TEST(Serialization, RoundTripIsExact) {
  Rng rng(8);
  const nn::DenseNet net(7, {{5, nn::Activation::Relu}, {3, nn::Activation::Linear}}, 0.25, rng);
  const auto j = nn::to_json(net);
  const auto back = nn::dense_net_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_TRUE(back == net);
  EXPECT_EQ(nn::to_json(back).dump(), j.dump());
  auto broken = j;
  broken["layers"][0]["bias"] = std::vector<double>{1.0};
  EXPECT_THROW(nn::dense_net_from_json(broken), DimensionMismatch);
}

TEST(Init, DeterministicGlorotBounds) {
  Rng a(9), b(9);
  const nn::DenseNet x(30, {{20, nn::Activation::Relu}}, 0.0, a);
  const nn::DenseNet y(30, {{20, nn::Activation::Relu}}, 0.0, b);
  EXPECT_TRUE(x == y);
  const double limit = std::sqrt(6.0 / 50.0);
  EXPECT_LE(x.layers()[0].weight.cwiseAbs().maxCoeff(), limit);
  EXPECT_TRUE(x.layers()[0].bias.isZero());
}

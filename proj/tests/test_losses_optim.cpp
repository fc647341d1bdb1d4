#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mope/losses.hpp"
#include "mope/network.hpp"
#include "mope/optim.hpp"
#include "support/oracles.hpp"

namespace mope {
namespace {

const double kLn2 = std::numbers::ln2;

Tensor<double> filled(double v, Shape s = {2, 1, 3, 3}) { return Tensor<double>(s, v); }

TEST(GanLoss, HalfHalfGivesTwoLnTwoAndLnTwo) {
  const auto l = gan_loss(filled(0.5), filled(0.5));
  EXPECT_NEAR(l.loss_d, 2 * kLn2, 1e-9);
  EXPECT_NEAR(l.loss_g, kLn2, 1e-9);
}

TEST(GanLoss, PerfectDiscriminatorLimit) {
  const double eps = 1e-9;
  const auto l = gan_loss(filled(1 - eps), filled(eps));
  EXPECT_LT(l.loss_d, 1e-6);
}

TEST(GanLoss, ClampsSaturatedMapsToFiniteValues) {
  const auto l = gan_loss(filled(0.0), filled(1.0));
  EXPECT_TRUE(std::isfinite(l.loss_d));
  EXPECT_TRUE(std::isfinite(l.loss_g));
  EXPECT_NEAR(l.loss_d, -2 * std::log(kProbEps), 1e-6);
}

TEST(GanLoss, LogAppliesPerPatch) {
  // Patches {0.2, 0.8}: mean of -log is not -log of the mean.
  Tensor<double> d(Shape{1, 1, 1, 2}, std::vector<double>{0.2, 0.8});
  EXPECT_NEAR(generator_adversarial_loss(d).value, -(std::log(0.2) + std::log(0.8)) / 2, 1e-12);
}

TEST(GanLoss, PermutationInvariantOverBatch) {
  Tensor<double> a(Shape{3, 1, 1, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  Tensor<double> b(Shape{3, 1, 1, 2}, std::vector<double>{0.5, 0.6, 0.1, 0.2, 0.3, 0.4});
  EXPECT_NEAR(gan_loss(a, b).loss_d, gan_loss(b, a).loss_d, 1e-12);
  EXPECT_NEAR(gan_loss(a, a).loss_g, gan_loss(b, b).loss_g, 1e-12);
}

TEST(SimLoss, ZeroAndConstantOffset) {
  std::mt19937_64 rng(1);
  const auto x = testing::random_tensor<double>({2, 3, 4, 4}, rng);
  EXPECT_EQ(sim_loss(x, x), 0.0);
  Tensor<double> y = x;
  for (auto& v : y.values()) v += 0.1;
  EXPECT_NEAR(sim_loss(y, x), 0.01, 1e-9);
}

TEST(SimLoss, MatchesScalarLoop) {
  std::mt19937_64 rng(2);
  const auto a = testing::random_tensor<float>({2, 3, 4, 4}, rng);
  const auto b = testing::random_tensor<float>({2, 3, 4, 4}, rng);
  double ref = 0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          const double d = static_cast<double>(a(n, c, i, j)) - b(n, c, i, j);
          ref += d * d;
        }
  EXPECT_NEAR(sim_loss(a, b), ref / 96, 1e-6);
}

TEST(SimLoss, RejectsShapeMismatch) {
  EXPECT_THROW(sim_loss(filled(0.0), filled(0.0, {2, 1, 3, 4})), ShapeError);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 1.0), 0.75);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 0.0), 0.5);
  EXPECT_LT(total_loss(0.5, 0.25, 2.0), total_loss(0.5, 0.25, 3.0));
  EXPECT_THROW(total_loss(0.5, 0.25, -1.0), std::invalid_argument);
}

TEST(GateLoss, Fixtures) {
  EXPECT_NEAR(gate_loss(0.5, 0.5), 2 * kLn2, 1e-9);
  EXPECT_LT(gate_loss(1 - 1e-9, 1e-9), 1e-6);
  const auto l = gate_batch_loss(filled(0.5), filled(0.5));
  EXPECT_NEAR(l.value, 2 * kLn2, 1e-9);
}

TEST(GateLoss, ScoreIsMeanBeforeLog) {
  Tensor<double> clean(Shape{1, 1, 1, 2}, std::vector<double>{0.2, 0.8});
  Tensor<double> noisy(Shape{1, 1, 1, 2}, std::vector<double>{0.1, 0.3});
  EXPECT_NEAR(gate_batch_loss(clean, noisy).value, -std::log(0.5) - std::log(0.8), 1e-12);
}

TEST(GateLoss, GradientThroughSigmoidLogitsMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto zc = testing::random_tensor<double>({3, 1, 4, 4}, rng, -2, 2);
  const auto zn = testing::random_tensor<double>({3, 1, 4, 4}, rng, -2, 2);
  auto loss = [](const Tensor<double>& a, const Tensor<double>& b) {
    return gate_batch_loss(sigmoid(a), sigmoid(b)).value;
  };
  const auto pc = sigmoid(zc), pn = sigmoid(zn);
  const auto l = gate_batch_loss(pc, pn);
  const auto gzc = activate_backward(zc, pc, l.grad_clean, Activation::sigmoid);
  const auto gzn = activate_backward(zn, pn, l.grad_noisy, Activation::sigmoid);
  const double h = 1e-6;
  for (std::size_t i = 0; i < zc.size(); ++i) {
    Tensor<double> up = zc, dn = zc;
    up[i] += h;
    dn[i] -= h;
    const double num = (loss(up, zn) - loss(dn, zn)) / (2 * h);
    EXPECT_LT(std::abs(num - gzc[i]) / std::max(std::abs(num), 1e-8), 1e-4);
    Tensor<double> up2 = zn, dn2 = zn;
    up2[i] += h;
    dn2[i] -= h;
    const double num2 = (loss(zc, up2) - loss(zc, dn2)) / (2 * h);
    EXPECT_LT(std::abs(num2 - gzn[i]) / std::max(std::abs(num2), 1e-8), 1e-4);
  }
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  const Tensor<double> z(Shape{2, 10, 1, 1}, 0.0);
  const std::vector<int> y{3, 7};
  EXPECT_NEAR(softmax_cross_entropy(z, std::span<const int>(y)).value, std::log(10.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  Tensor<double> z(Shape{1, 3, 1, 1}, std::vector<double>{1000.0, 0.0, -1000.0});
  const std::vector<int> y{0};
  const auto l = softmax_cross_entropy(z, std::span<const int>(y));
  EXPECT_NEAR(l.value, 0.0, 1e-12);
  EXPECT_TRUE(l.grad.all_finite());
}

ParamStore<double> scalar_store(double w) {
  ParamStore<double> p;
  p.set({0, ParamRole::weight}, Tensor<double>(Shape{1, 1, 1, 1}, w));
  return p;
}

TEST(Optimizer, SgdFirstStepIsMinusLrTimesGradient) {
  auto p = scalar_store(2.0);
  auto st = init_optimizer_state(p);
  sgd_momentum_step(p, scalar_store(0.5), st, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(p.at({0, ParamRole::weight})[0], 2.0 - 0.05);
  sgd_momentum_step(p, scalar_store(0.5), st, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(p.at({0, ParamRole::weight})[0], 1.95 - 0.1 * (0.9 * 0.5 + 0.5));
}

TEST(Optimizer, AdamFirstStepMovesByLr) {
  for (double g : {1e-3, 0.5, -7.0}) {
    auto p = scalar_store(0.0);
    auto st = init_optimizer_state(p);
    adam_step(p, scalar_store(g), st, 1e-3, 0.9, 0.999, 1e-8);
    EXPECT_NEAR(std::abs(p.at({0, ParamRole::weight})[0]), 1e-3, 1e-8);
  }
}

TEST(Optimizer, AdamTwoStepScalarTrace) {
  // w0 = 1, g = 0.5 then -0.25, lr 0.1, betas 0.9 / 0.999, eps 1e-8 (hand-evaluated).
  auto p = scalar_store(1.0);
  auto st = init_optimizer_state(p);
  adam_step(p, scalar_store(0.5), st, 0.1, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(p.at({0, ParamRole::weight})[0], 0.900000002, 1e-12);
  adam_step(p, scalar_store(-0.25), st, 0.1, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(p.at({0, ParamRole::weight})[0], 0.8733662987078463, 1e-12);
  EXPECT_EQ(st.step, 2);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersBitIdentical) {
  std::mt19937_64 rng(4);
  ParamStore<float> p, g;
  p.set({0, ParamRole::weight}, testing::random_tensor<float>({4, 3, 3, 3}, rng));
  g.set({0, ParamRole::weight}, testing::random_tensor<float>({4, 3, 3, 3}, rng));
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
    auto q = p;
    auto st = init_optimizer_state(q);
    OptimizerConfig cfg;
    cfg.kind = kind;
    for (int i = 0; i < 3; ++i) optimizer_step(cfg, q, g, st, 0.0);
    EXPECT_EQ(q, p);
  }
}

TEST(LrSchedule, DividesAtConfiguredIterations) {
  const std::vector<LrDrop> s{{200, 10.0}, {400, 10.0}};
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, s, 0), 2e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, s, 199), 2e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, s, 200), 2e-5);
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, s, 400), 2e-6);
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, {}, 10000), 2e-4);
}

}  // namespace
}  // namespace mope

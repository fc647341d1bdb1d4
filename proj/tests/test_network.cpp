#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mope/models.hpp"
#include "mope/network.hpp"
#include "support/oracles.hpp"

namespace mope {
namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s{"tiny", 3, {}};
  s.layers = {LayerSpec::conv(3, 8, 3), LayerSpec::act(Activation::relu),
              LayerSpec::conv(8, 8, 3, 2), LayerSpec::instance_norm(8),
              LayerSpec::act(Activation::tanh)};
  return s;
}

TEST(Network, BuildIsDeterministicPerSeed) {
  const auto a = build<float>(build_denoiser(), 42);
  const auto b = build<float>(build_denoiser(), 42);
  const auto c = build<float>(build_denoiser(), 43);
  EXPECT_EQ(a.params, b.params);
  EXPECT_FALSE(a.params == c.params);
}

TEST(Network, ChannelMismatchNamesTheLayer) {
  NetworkSpec s = tiny_spec();
  s.layers[2] = LayerSpec::conv(4, 8, 3, 2);
  try {
    Network net(s);
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    EXPECT_EQ(e.layer(), 2);
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos);
  }
}

TEST(Network, InstanceNormChannelMismatchIsRejected) {
  NetworkSpec s = tiny_spec();
  s.layers[3] = LayerSpec::instance_norm(4);
  EXPECT_THROW(Network{s}, SpecError);
}

TEST(Network, SkipMustReferenceEarlierLayer) {
  NetworkSpec s = tiny_spec();
  s.layers.push_back(LayerSpec::add_skip(7));
  try {
    Network net(s);
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    EXPECT_EQ(e.layer(), 5);
  }
}

TEST(Network, EvenKernelIsRejected) {
  NetworkSpec s = tiny_spec();
  s.layers[0] = LayerSpec::conv(3, 8, 4);
  EXPECT_THROW(Network{s}, SpecError);
}

TEST(Network, HeInitVarianceWithinTwentyPercent) {
  NetworkSpec s{"wide", 64, {LayerSpec::conv(64, 64, 3)}};
  const auto built = build<double>(s, 9);
  const auto& w = built.params.at({0, ParamRole::weight});
  double mean = 0, sq = 0;
  for (double v : w.values()) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w.values()) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(w.size());
  const double expected = 2.0 / (9.0 * 64.0);
  EXPECT_NEAR(var / expected, 1.0, 0.2);
  EXPECT_NEAR(mean, 0.0, 0.01);
}

TEST(Network, BiasesZeroAndAffineIdentityAtInit) {
  const auto built = build<float>(tiny_spec(), 1);
  for (float v : built.params.at({0, ParamRole::bias}).values()) EXPECT_EQ(v, 0.0f);
  for (float v : built.params.at({3, ParamRole::gamma}).values()) EXPECT_EQ(v, 1.0f);
  for (float v : built.params.at({3, ParamRole::beta}).values()) EXPECT_EQ(v, 0.0f);
}

TEST(Network, InferShapesFollowsStrides) {
  const Network net(tiny_spec());
  const auto shapes = net.infer_shapes({2, 3, 9, 10});
  ASSERT_EQ(shapes.size(), 5u);
  EXPECT_EQ(shapes[0], (Shape{2, 8, 9, 10}));
  EXPECT_EQ(shapes[4], (Shape{2, 8, 5, 5}));
}

TEST(Network, WrongInputChannelsIsAShapeError) {
  const auto built = build<float>(tiny_spec(), 1);
  EXPECT_THROW(forward(built.net, built.params, Tensor<float>(Shape{1, 4, 8, 8})), ShapeError);
}

TEST(Network, ForwardIsDeterministicAndBatchIndependent) {
  const auto built = build<float>(build_gating(), 3);
  std::mt19937_64 rng(2);
  const auto a = testing::random_tensor<float>({1, 3, 24, 24}, rng, 0, 1);
  const auto b = testing::random_tensor<float>({1, 3, 24, 24}, rng, 0, 1);
  const auto both = forward(built.net, built.params, stack(std::vector{a, b})).output;
  const auto ya = forward(built.net, built.params, a).output;
  const auto yb = forward(built.net, built.params, b).output;
  EXPECT_EQ(both, forward(built.net, built.params, stack(std::vector{a, b})).output);
  EXPECT_LT(testing::max_abs_diff(slice_batch(both, 0, 1), ya), 1e-6);
  EXPECT_LT(testing::max_abs_diff(slice_batch(both, 1, 1), yb), 1e-6);
}

TEST(Network, BackwardWithoutTapeThrows) {
  const auto built = build<float>(tiny_spec(), 1);
  const Tensor<float> x(Shape{1, 3, 8, 8}, 0.5f);
  auto fwd = forward(built.net, built.params, x, false);
  EXPECT_THROW(backward(built.net, built.params, fwd.tape, fwd.output), std::logic_error);
}

TEST(Network, BackwardProducesGradientForEveryParameter) {
  const auto built = build<float>(build_denoiser(), 1);
  const Tensor<float> x(Shape{1, 3, 12, 12}, 0.5f);
  auto fwd = forward(built.net, built.params, x, true);
  auto b = backward(built.net, built.params, fwd.tape, fwd.output);
  EXPECT_EQ(b.grads.tensor_count(), built.params.tensor_count());
  for (const auto& [k, t] : built.params) EXPECT_EQ(b.grads.at(k).shape(), t.shape()) << k.name();
  EXPECT_EQ(b.grad_input.shape(), x.shape());
}

TEST(Network, CheckParamsRejectsMissingAndMisshapenTensors) {
  auto built = build<float>(tiny_spec(), 1);
  ParamStore<float> missing;
  for (const auto& [k, t] : built.params) {
    if (!(k == ParamKey{2, ParamRole::bias})) missing.set(k, t);
  }
  try {
    check_params(built.net, missing);
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_EQ(e.layer(), 2);
  }
  built.params.set({0, ParamRole::weight}, Tensor<float>(Shape{8, 3, 5, 5}));
  EXPECT_THROW(check_params(built.net, built.params), SpecError);
}

TEST(ParamKey, NameRoundTrip) {
  const ParamKey k{12, ParamRole::gamma};
  EXPECT_EQ(k.name(), "layer12.gamma");
  EXPECT_EQ(ParamKey::parse("layer12.gamma"), k);
  EXPECT_FALSE(ParamKey::parse("layer.weight"));
  EXPECT_FALSE(ParamKey::parse("layer3.kernel"));
  EXPECT_FALSE(ParamKey::parse("conv3.weight"));
}

TEST(Network, EmptyLayerListIsIdentity) {
  const auto built = build<float>(NetworkSpec{"empty", 3, {}}, 0);
  std::mt19937_64 rng(1);
  const auto x = testing::random_tensor<float>({2, 3, 5, 5}, rng);
  EXPECT_EQ(forward(built.net, built.params, x).output, x);
}

TEST(Network, TwoIdentityPointwiseConvsAreIdentity) {
  auto built = build<float>(NetworkSpec{"id", 2, {LayerSpec::conv(2, 2, 1), LayerSpec::conv(2, 2, 1)}}, 0);
  for (int layer : {0, 1}) {
    Tensor<float> w(Shape{2, 2, 1, 1});
    w(0, 0, 0, 0) = w(1, 1, 0, 0) = 1.0f;
    built.params.set({layer, ParamRole::weight}, w);
  }
  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor<float>({1, 2, 4, 4}, rng);
  EXPECT_EQ(forward(built.net, built.params, x).output, x);
}

TEST(Network, ToyNetGradientMatchesFiniteDifferences) {
  // conv -> leaky relu -> conv, in double; loss = sum(out * r).
  NetworkSpec s{"toy", 2, {LayerSpec::conv(2, 3, 3), LayerSpec::act(Activation::leaky_relu, 0.2),
                           LayerSpec::conv(3, 1, 3, 2)}};
  auto built = build<double>(s, 4);
  std::mt19937_64 rng(5);
  const auto x = testing::random_tensor<double>({1, 2, 6, 6}, rng);
  const auto fwd = forward(built.net, built.params, x, true);
  const auto r = testing::random_tensor<double>(fwd.output.shape(), rng);
  const auto grads = backward(built.net, built.params, fwd.tape, r);
  auto loss = [&](const ParamStore<double>& p, const Tensor<double>& in) {
    const auto y = forward(built.net, p, in).output;
    double l = 0;
    for (std::size_t i = 0; i < y.size(); ++i) l += y[i] * r[i];
    return l;
  };
  const double h = 1e-6;
  for (auto& [k, t] : built.params) {
    for (std::size_t i = 0; i < t.size(); i += 3) {
      const double keep = t[i];
      t[i] = keep + h;
      const double up = loss(built.params, x);
      t[i] = keep - h;
      const double down = loss(built.params, x);
      t[i] = keep;
      const double num = (up - down) / (2 * h);
      const double ana = grads.grads.at(k)[i];
      EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}), 1e-3)
          << k.name() << "[" << i << "]";
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double num = (loss(built.params, xp) - loss(built.params, xm)) / (2 * h);
    EXPECT_NEAR(grads.grad_input[i], num, 1e-3 * std::max(1.0, std::abs(num)));
  }
}

}  // namespace
}  // namespace mope

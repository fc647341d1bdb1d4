#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mope/models.hpp"
#include "mope/router.hpp"
#include "support/oracles.hpp"

namespace mope {
namespace {

// A gate whose patch map is the constant sigmoid(logit) for every input.
ParamStore<float> constant_gate(double logit) {
  auto built = build<float>(build_gating(), 1);
  const int last = built.net.size() - 2;  // final conv before the sigmoid
  auto& w = built.params.at({last, ParamRole::weight});
  for (auto& v : w.values()) v = 0.0f;
  built.params.at({last, ParamRole::bias})[0] = static_cast<float>(logit);
  return built.params;
}

Mope make_mope(double logit, MopeConfig cfg = {}) {
  auto g = build<float>(build_denoiser(), 2);
  return Mope(Network(build_gating()), constant_gate(logit), g.net, g.params, cfg);
}

TEST(Route, ThresholdAndTieBreak) {
  const MopeConfig cfg;
  EXPECT_EQ(route_for_score(0.9, cfg), Expert::identity);
  EXPECT_EQ(route_for_score(0.1, cfg), Expert::denoiser);
  EXPECT_EQ(route_for_score(0.5, cfg), Expert::denoiser);
  EXPECT_EQ(route_for_score(std::nextafter(0.5, 1.0), cfg), Expert::identity);
  EXPECT_EQ(route_for_score(0.3, MopeConfig{0.5, Expert::average_filter}), Expert::average_filter);
}

TEST(Route, ScoreIsMeanOfPatchMap) {
  Tensor<float> map(Shape{1, 1, 2, 2}, std::vector<float>{0.2f, 0.4f, 0.6f, 1.0f});
  const auto d = decide_from_map(map, MopeConfig{});
  EXPECT_NEAR(d.score, 0.55, 1e-7);
  EXPECT_FLOAT_EQ(d.map_min, 0.2f);
  EXPECT_FLOAT_EQ(d.map_max, 1.0f);
  EXPECT_EQ(d.chosen, Expert::identity);
}

TEST(Route, ConfigValidation) {
  EXPECT_THROW(check_mope_config({0.0, Expert::denoiser}), std::invalid_argument);
  EXPECT_THROW(check_mope_config({1.0, Expert::denoiser}), std::invalid_argument);
  EXPECT_THROW(check_mope_config({0.5, Expert::identity}), std::invalid_argument);
}

TEST(Mope, HighScorePassesImageThroughBitExactly) {
  const auto m = make_mope(std::log(0.9 / 0.1));
  std::mt19937_64 rng(3);
  const auto x = testing::random_tensor<float>({1, 3, 32, 32}, rng, 0, 1);
  GateDecision d;
  const auto y = m.preprocess(x, &d);
  EXPECT_NEAR(d.score, 0.9, 1e-6);
  EXPECT_EQ(d.chosen, Expert::identity);
  EXPECT_EQ(y, x);
}

TEST(Mope, LowScoreRunsTheDenoiser) {
  const auto m = make_mope(std::log(0.1 / 0.9));
  std::mt19937_64 rng(4);
  const auto x = testing::random_tensor<float>({1, 3, 32, 32}, rng, 0, 1);
  GateDecision d;
  const auto y = m.preprocess(x, &d);
  EXPECT_EQ(d.chosen, Expert::denoiser);
  EXPECT_EQ(y, forward(m.denoiser(), m.denoiser_params(), x).output);
  for (float v : y.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Mope, ExactTieGoesToNoisyExpert) {
  const auto m = make_mope(0.0, MopeConfig{0.5, Expert::average_filter});
  const Tensor<float> x(Shape{1, 3, 16, 16}, 0.25f);
  GateDecision d;
  const auto y = m.preprocess(x, &d);
  EXPECT_EQ(d.score, 0.5);
  EXPECT_EQ(d.chosen, Expert::average_filter);
  for (float v : y.values()) EXPECT_NEAR(v, 0.25f, 1e-7);
}

TEST(Mope, BatchRouting) {
  const auto m = make_mope(-2.0);
  std::mt19937_64 rng(5);
  const auto x = testing::random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  const auto out = preprocess_batch(m, {x, x, x});
  ASSERT_EQ(out.decisions.size(), 3u);
  for (const auto& d : out.decisions) {
    EXPECT_EQ(d.score, out.decisions[0].score);
    EXPECT_EQ(d.chosen, out.decisions[0].chosen);
  }
  EXPECT_EQ(out.images[1], out.images[0]);
  const auto empty = preprocess_batch(m, {});
  EXPECT_TRUE(empty.images.empty());
  EXPECT_TRUE(empty.decisions.empty());
}

TEST(Mope, RejectsBatchedImage) {
  const auto m = make_mope(1.0);
  EXPECT_THROW(m.decide(Tensor<float>(Shape{2, 3, 16, 16})), ShapeError);
}

TEST(Mope, DecisionLogFormat) {
  std::ostringstream os;
  GateDecision a{0.75, Expert::identity}, b{0.25, Expert::denoiser};
  write_decision_log(os, {"000001", "000002"}, {a, b});
  EXPECT_EQ(os.str(), "image_id,score,expert\n000001,0.75,identity\n000002,0.25,denoiser\n");
}

TEST(Mope, ReportFromDecisions) {
  std::vector<GateDecision> d(4);
  d[0].chosen = Expert::identity;
  d[1].chosen = Expert::denoiser;
  d[2].chosen = Expert::denoiser;
  d[3].chosen = Expert::identity;
  const auto r = gate_report(d, {false, true, false, true});
  EXPECT_EQ(r.accuracy, 0.5);
}

}  // namespace
}  // namespace mope

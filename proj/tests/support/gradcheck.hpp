#ifndef MOPE_TESTS_GRADCHECK_HPP_
#define MOPE_TESTS_GRADCHECK_HPP_

// Central finite-difference checks. Analytic gradients are computed in
// float; the numeric reference evaluates the same operator in double at the
// identical (float-representable) point.
//
// relative error = |a - n| / max(|a|, |n|, kRelFloor)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mope/mope.hpp"
#include "support/oracles.hpp"

namespace mope::testing {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kRelFloor = 1e-4;
inline constexpr double kGradTolerance = 1e-3;

struct GradCheckResult {
  std::string name;
  int probes = 0;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ArgsD = std::vector<Tensor<double>>;
using ArgsF = std::vector<Tensor<float>>;

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelFloor});
}

/// `loss`: ArgsD -> double. `grad`: ArgsF -> ArgsF (dLoss/dArg for each arg).
/// Probes cycle through the arguments; indices are uniform within each.
template <typename LossD, typename GradF>
GradCheckResult grad_check(std::string name, const ArgsF& args, LossD&& loss, GradF&& grad,
                           int probes, std::uint64_t seed) {
  ArgsD point;
  for (const auto& a : args) point.push_back(a.template cast<double>());
  const ArgsF analytic = grad(args);
  std::mt19937_64 rng(seed);
  GradCheckResult r{std::move(name)};
  for (int p = 0; p < probes; ++p) {
    const std::size_t which = static_cast<std::size_t>(p) % args.size();
    const std::size_t idx =
        std::uniform_int_distribution<std::size_t>(0, args[which].size() - 1)(rng);
    ArgsD plus = point, minus = point;
    plus[which][idx] += kFdStep;
    minus[which][idx] -= kFdStep;
    const double numeric = (loss(plus) - loss(minus)) / (2 * kFdStep);
    const double a = analytic[which][idx];
    const double e = rel_error(a, numeric);
    if (e >= r.max_rel_error) {
      r.max_rel_error = e;
      r.worst_analytic = a;
      r.worst_numeric = numeric;
    }
    ++r.probes;
  }
  return r;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

/// Scalarises a tensor-valued operator as L = <fwd(args), R> for a fixed
/// random R, so dL/dout = R.
template <typename Fwd, typename Bwd>
GradCheckResult check_projected(std::string name, const ArgsF& args, Fwd&& fwd, Bwd&& bwd,
                                int probes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995u);
  const Shape out_shape = fwd(args).shape();
  const Tensor<float> r_f = random_tensor<float>(out_shape, rng);
  const Tensor<double> r_d = r_f.cast<double>();
  return grad_check(
      std::move(name), args, [&](const ArgsD& a) { return dot(fwd(a), r_d); },
      [&](const ArgsF& a) { return bwd(a, r_f); }, probes, seed);
}

template <typename T>
std::span<const T> span_of(const Tensor<T>& t) {
  return t.values();
}

inline Tensor<float> from_vector(const std::vector<float>& v) {
  return Tensor<float>(vector_shape(static_cast<int>(v.size())), v);
}

// Network checks: args = [input, params in key order].
template <typename T>
ParamStore<T> params_from_args(const std::vector<ParamKey>& keys,
                               const std::vector<Tensor<T>>& args) {
  ParamStore<T> p;
  for (std::size_t i = 0; i < keys.size(); ++i) p.set(keys[i], args[i + 1]);
  return p;
}

inline GradCheckResult check_network(const NetworkSpec& spec, Shape input, int probes,
                                     std::uint64_t seed) {
  auto built = build<float>(spec, seed);
  std::mt19937_64 rng(seed);
  // Non-zero biases / affine terms so their gradients are exercised too.
  for (auto& [k, t] : built.params) {
    if (k.role != ParamRole::weight) {
      for (auto& v : t.values()) v += static_cast<float>(0.1 * std::normal_distribution<>()(rng));
    }
  }
  std::vector<ParamKey> keys;
  ArgsF args{random_tensor<float>(input, rng, 0.0, 1.0)};
  for (const auto& [k, t] : built.params) {
    keys.push_back(k);
    args.push_back(t);
  }
  const Network net = built.net;
  auto fwd = [&](const auto& a) { return forward(net, params_from_args(keys, a), a[0]).output; };
  auto bwd = [&](const ArgsF& a, const Tensor<float>& g) {
    const auto p = params_from_args(keys, a);
    auto res = forward(net, p, a[0], true);
    auto b = backward(net, p, res.tape, g);
    ArgsF out{b.grad_input};
    for (const auto& k : keys) out.push_back(b.grads.at(k));
    return out;
  };
  return check_projected("network " + spec.name, args, fwd, bwd, probes, seed);
}

/// One entry per operator; each carries >= `probes` probes.
inline std::vector<GradCheckResult> run_gradient_suite(int probes = 60, std::uint64_t seed = 7) {
  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(seed);
  auto rnd = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return random_tensor<float>(s, rng, lo, hi);
  };

  // Convolution: (input, weight, bias).
  struct ConvCase {
    int c_in, c_out, k, stride, pad, h, w;
  };
  for (const ConvCase& cc : {ConvCase{3, 4, 3, 1, 1, 7, 6}, ConvCase{2, 5, 3, 2, 1, 9, 8},
                             ConvCase{4, 3, 1, 1, 0, 5, 5}, ConvCase{2, 3, 5, 2, 0, 11, 9}}) {
    const ConvOptions opt{cc.stride, cc.pad};
    ArgsF args{rnd({2, cc.c_in, cc.h, cc.w}), rnd({cc.c_out, cc.c_in, cc.k, cc.k}),
               rnd(vector_shape(cc.c_out))};
    auto fwd = [&](const auto& a) { return conv2d(a[0], a[1], span_of(a[2]), opt); };
    auto bwd = [&](const ArgsF& a, const Tensor<float>& g) {
      auto gr = conv2d_backward(a[0], a[1], span_of(a[2]), opt, g);
      return ArgsF{gr.input, gr.weight, from_vector(gr.bias)};
    };
    out.push_back(check_projected("conv2d k" + std::to_string(cc.k) + " s" +
                                      std::to_string(cc.stride) + " p" + std::to_string(cc.pad),
                                  args, fwd, bwd, probes, rng()));
  }

  // Transposed convolution.
  struct TCase {
    int c_in, c_out, k, stride, pad, op_h, op_w, h, w;
  };
  for (const TCase& tc : {TCase{4, 3, 3, 2, 1, 1, 1, 4, 5}, TCase{3, 2, 3, 1, 1, 0, 0, 5, 4},
                          TCase{2, 3, 3, 2, 0, 0, 1, 3, 3}}) {
    const ConvOptions opt{tc.stride, tc.pad, tc.op_h, tc.op_w};
    ArgsF args{rnd({2, tc.c_in, tc.h, tc.w}), rnd({tc.c_in, tc.c_out, tc.k, tc.k}),
               rnd(vector_shape(tc.c_out))};
    auto fwd = [&](const auto& a) { return conv_transpose2d(a[0], a[1], span_of(a[2]), opt); };
    auto bwd = [&](const ArgsF& a, const Tensor<float>& g) {
      auto gr = conv_transpose2d_backward(a[0], a[1], span_of(a[2]), opt, g);
      return ArgsF{gr.input, gr.weight, from_vector(gr.bias)};
    };
    out.push_back(check_projected("conv_transpose2d k" + std::to_string(tc.k) + " s" +
                                      std::to_string(tc.stride),
                                  args, fwd, bwd, probes, rng()));
  }

  {
    ArgsF args{rnd({2, 3, 5, 6}, -2.0, 3.0), rnd(vector_shape(3), 0.5, 1.5),
               rnd(vector_shape(3))};
    auto fwd = [](const auto& a) { return instance_norm(a[0], span_of(a[1]), span_of(a[2])); };
    auto bwd = [](const ArgsF& a, const Tensor<float>& g) {
      auto gr = instance_norm_backward(a[0], span_of(a[1]), span_of(a[2]), g);
      return ArgsF{gr.input, from_vector(gr.gamma), from_vector(gr.beta)};
    };
    out.push_back(check_projected("instance_norm", args, fwd, bwd, probes, rng()));
  }

  const std::pair<Activation, const char*> acts[] = {{Activation::relu, "relu"},
                                                     {Activation::leaky_relu, "leaky_relu"},
                                                     {Activation::sigmoid, "sigmoid"},
                                                     {Activation::tanh, "tanh"}};
  for (const auto& [kind, label] : acts) {
    // Keep inputs away from the kink at zero so the finite difference is valid.
    Tensor<float> x = rnd({2, 3, 4, 4}, -2.0, 2.0);
    for (auto& v : x.values()) {
      if (std::abs(v) < 0.05f) v += v < 0 ? -0.05f : 0.05f;
    }
    const Activation k = kind;
    auto fwd = [k](const auto& a) {
      using T = typename std::decay_t<decltype(a[0])>::value_type;
      return activate(a[0], k, static_cast<T>(0.2));
    };
    auto bwd = [k](const ArgsF& a, const Tensor<float>& g) {
      const auto y = activate(a[0], k, 0.2f);
      return ArgsF{activate_backward(a[0], y, g, k, 0.2f)};
    };
    out.push_back(check_projected(std::string("activation ") + label, ArgsF{x}, fwd, bwd,
                                  probes, rng()));
  }

  {
    auto fwd = [](const auto& a) { return box_filter3(a[0]); };
    auto bwd = [](const ArgsF&, const Tensor<float>& g) { return ArgsF{box_filter3_backward(g)}; };
    out.push_back(check_projected("box_filter3", ArgsF{rnd({1, 3, 6, 5})}, fwd, bwd, probes, rng()));
  }
  for (const auto& [mode, label] :
       {std::pair{ResizeMode::bilinear, "bilinear"}, std::pair{ResizeMode::nearest, "nearest"}}) {
    for (const auto& [oh, ow] : {std::pair{3, 4}, std::pair{12, 10}}) {
      const ResizeMode m = mode;
      const int h = oh, w = ow;
      auto fwd = [=](const auto& a) { return resize(a[0], h, w, m); };
      auto bwd = [=](const ArgsF& a, const Tensor<float>& g) {
        return ArgsF{resize_backward(a[0].shape(), g, m)};
      };
      out.push_back(check_projected(std::string("resize ") + label + " to " + std::to_string(h) +
                                        "x" + std::to_string(w),
                                    ArgsF{rnd({2, 2, 6, 5})}, fwd, bwd, probes, rng()));
    }
  }

  {
    auto fwd = [](const auto& a) { return elementwise_add(a[0], a[1]); };
    auto bwd = [](const ArgsF&, const Tensor<float>& g) {
      auto [ga, gb] = elementwise_add_backward(g);
      return ArgsF{ga, gb};
    };
    out.push_back(check_projected("add_skip", ArgsF{rnd({2, 3, 4, 4}), rnd({2, 3, 4, 4})}, fwd,
                                  bwd, probes, rng()));
  }
  {
    auto fwd = [](const auto& a) { return concat_channels(a[0], a[1]); };
    auto bwd = [](const ArgsF&, const Tensor<float>& g) {
      auto [ga, gb] = concat_channels_backward(g, 2);
      return ArgsF{ga, gb};
    };
    out.push_back(check_projected("concat_skip", ArgsF{rnd({2, 2, 4, 3}), rnd({2, 3, 4, 3})}, fwd,
                                  bwd, probes, rng()));
  }
  {
    auto fwd = [](const auto& a) { return global_avg_pool(a[0]); };
    auto bwd = [](const ArgsF& a, const Tensor<float>& g) {
      return ArgsF{global_avg_pool_backward(a[0].shape(), g)};
    };
    out.push_back(check_projected("global_avg_pool", ArgsF{rnd({2, 3, 4, 5})}, fwd, bwd, probes,
                                  rng()));
  }

  // Losses (already scalar).
  {
    ArgsF args{rnd({2, 1, 3, 3}, 0.05, 0.95), rnd({2, 1, 3, 3}, 0.05, 0.95)};
    out.push_back(grad_check(
        "discriminator_loss", args,
        [](const ArgsD& a) { return discriminator_loss(a[0], a[1]).value; },
        [](const ArgsF& a) {
          auto l = discriminator_loss(a[0], a[1]);
          return ArgsF{l.grad_real, l.grad_fake};
        },
        probes, rng()));
  }
  {
    ArgsF args{rnd({2, 1, 3, 3}, 0.05, 0.95)};
    out.push_back(grad_check(
        "generator_adversarial_loss", args,
        [](const ArgsD& a) { return generator_adversarial_loss(a[0]).value; },
        [](const ArgsF& a) { return ArgsF{generator_adversarial_loss(a[0]).grad}; }, probes,
        rng()));
  }
  {
    ArgsF args{rnd({2, 3, 4, 4}, 0.0, 1.0), rnd({2, 3, 4, 4}, 0.0, 1.0)};
    out.push_back(grad_check(
        "sim_loss", args, [](const ArgsD& a) { return sim_loss(a[0], a[1]); },
        [](const ArgsF& a) {
          auto g = sim_loss_with_grad(a[0], a[1]).grad;
          Tensor<float> neg = g;
          scale_inplace(neg, -1.0f);
          return ArgsF{g, neg};
        },
        probes, rng()));
  }
  {
    ArgsF args{rnd({3, 1, 3, 3}, 0.1, 0.9), rnd({3, 1, 3, 3}, 0.1, 0.9)};
    out.push_back(grad_check(
        "gate_loss", args, [](const ArgsD& a) { return gate_batch_loss(a[0], a[1]).value; },
        [](const ArgsF& a) {
          auto l = gate_batch_loss(a[0], a[1]);
          return ArgsF{l.grad_clean, l.grad_noisy};
        },
        probes, rng()));
  }
  {
    const std::vector<int> labels{2, 0, 4};
    ArgsF args{rnd({3, 5, 1, 1}, -3.0, 3.0)};
    out.push_back(grad_check(
        "softmax_cross_entropy", args,
        [&](const ArgsD& a) { return softmax_cross_entropy(a[0], std::span<const int>(labels)).value; },
        [&](const ArgsF& a) {
          return ArgsF{softmax_cross_entropy(a[0], std::span<const int>(labels)).grad};
        },
        probes, rng()));
  }

  // Full networks, input and every parameter tensor.
  out.push_back(check_network(build_denoiser(), {2, 3, 16, 16}, probes * 2, rng()));
  out.push_back(check_network(build_gating(), {2, 3, 16, 16}, probes * 2, rng()));
  out.push_back(check_network(build_discriminator(), {2, 3, 16, 16}, probes * 2, rng()));
  out.push_back(check_network(build_classifier(4), {2, 3, 16, 16}, probes * 2, rng()));

  // Generator objective through D and G: -mean log D(G(y)) + lambda * mse(G(y), x).
  {
    auto g = build<float>(build_denoiser(), rng());
    auto d = build<float>(build_discriminator(), rng());
    const Tensor<float> y = rnd({2, 3, 16, 16}, 0.0, 1.0);
    const Tensor<float> x = rnd({2, 3, 16, 16}, 0.0, 1.0);
    std::vector<ParamKey> keys;
    ArgsF args{y};
    for (const auto& [k, t] : g.params) {
      keys.push_back(k);
      args.push_back(t);
    }
    const double lambda = 1.0;
    auto loss = [&](const ArgsD& a) {
      const auto gp = params_from_args(keys, a);
      const auto fake = forward(g.net, gp, a[0]).output;
      const auto dd = forward(d.net, d.params.cast<double>(), fake).output;
      return total_loss(generator_adversarial_loss(dd).value,
                        sim_loss(fake, x.cast<double>()), lambda);
    };
    auto grad = [&](const ArgsF& a) {
      const auto gp = params_from_args(keys, a);
      auto gf = forward(g.net, gp, a[0], true);
      auto df = forward(d.net, d.params, gf.output, true);
      auto adv = generator_adversarial_loss(df.output);
      Tensor<float> gout = backward(d.net, d.params, df.tape, adv.grad).grad_input;
      auto sim = sim_loss_with_grad(gf.output, x);
      scale_inplace(sim.grad, static_cast<float>(lambda));
      add_inplace(gout, sim.grad);
      auto b = backward(g.net, gp, gf.tape, gout);
      ArgsF res{b.grad_input};
      for (const auto& k : keys) res.push_back(b.grads.at(k));
      return res;
    };
    out.push_back(grad_check("generator objective through D", args, loss, grad, probes * 2, rng()));
  }
  return out;
}

}  // namespace mope::testing

#endif  // MOPE_TESTS_GRADCHECK_HPP_

#ifndef MOPE_LOSSES_HPP_
#define MOPE_LOSSES_HPP_

// Objectives for the denoiser (adversarial + similarity), the gate, and the
// downstream classifier. Values are computed in double; gradients are
// returned in the tensor's scalar type and already include the 1/N of the
// mean reductions.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mope/tensor.hpp"

namespace mope {

/// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) {
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

template <typename T>
struct LossGrad {
  double value = 0.0;
  Tensor<T> grad;
};

// ---------------------------------------------------------------------------
// Adversarial objective. Logs apply per patch and are averaged over all
// patches of all images.

template <typename T>
struct DiscriminatorLoss {
  double value = 0.0;
  Tensor<T> grad_real;
  Tensor<T> grad_fake;
};

/// -mean log D(x) - mean log(1 - D(G(y))).
template <typename T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& d_real,
                                        const Tensor<T>& d_fake) {
  DiscriminatorLoss<T> out{0.0, Tensor<T>(d_real.shape()), Tensor<T>(d_fake.shape())};
  const double nr = static_cast<double>(d_real.size());
  const double nf = static_cast<double>(d_fake.size());
  double lr = 0.0;
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    const double p = clamp_prob(d_real[i]);
    lr -= std::log(p);
    out.grad_real[i] = static_cast<T>(-1.0 / (p * nr));
  }
  double lf = 0.0;
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double p = clamp_prob(d_fake[i]);
    lf -= std::log(1.0 - p);
    out.grad_fake[i] = static_cast<T>(1.0 / ((1.0 - p) * nf));
  }
  out.value = lr / nr + lf / nf;
  return out;
}

/// Non-saturating generator term: -mean log D(G(y)).
template <typename T>
LossGrad<T> generator_adversarial_loss(const Tensor<T>& d_fake) {
  LossGrad<T> out{0.0, Tensor<T>(d_fake.shape())};
  const double n = static_cast<double>(d_fake.size());
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double p = clamp_prob(d_fake[i]);
    out.value -= std::log(p);
    out.grad[i] = static_cast<T>(-1.0 / (p * n));
  }
  out.value /= n;
  return out;
}

struct GanLoss {
  double loss_d = 0.0;
  double loss_g = 0.0;
};

template <typename T>
GanLoss gan_loss(const Tensor<T>& d_on_real, const Tensor<T>& d_on_fake) {
  return {discriminator_loss(d_on_real, d_on_fake).value,
          generator_adversarial_loss(d_on_fake).value};
}

// ---------------------------------------------------------------------------
// Similarity (mean squared error)

template <typename T>
LossGrad<T> sim_loss_with_grad(const Tensor<T>& denoised, const Tensor<T>& clean) {
  require_same_shape(denoised, clean, "sim_loss");
  LossGrad<T> out{0.0, Tensor<T>(denoised.shape())};
  const double n = static_cast<double>(denoised.size());
  if (denoised.empty()) return out;
  for (std::size_t i = 0; i < denoised.size(); ++i) {
    const double d = static_cast<double>(denoised[i]) - clean[i];
    out.value += d * d;
    out.grad[i] = static_cast<T>(2.0 * d / n);
  }
  out.value /= n;
  return out;
}

template <typename T>
double sim_loss(const Tensor<T>& denoised, const Tensor<T>& clean) {
  return sim_loss_with_grad(denoised, clean).value;
}

/// Generator objective: adversarial term plus lambda times similarity.
inline double total_loss(double loss_gan_g, double loss_sim, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  return loss_gan_g + lambda * loss_sim;
}

// ---------------------------------------------------------------------------
// Gate objective. Each image's score is the mean of its patch map; the log
// applies to that score.

inline double gate_loss(double h_on_clean, double h_on_noisy) {
  return -std::log(clamp_prob(h_on_clean)) - std::log(1.0 - clamp_prob(h_on_noisy));
}

/// Mean patch score of each image in a (n, 1, h, w) map.
template <typename T>
std::vector<double> image_scores(const Tensor<T>& map) {
  std::vector<double> s(map.n(), 0.0);
  const std::size_t per = map.n() == 0 ? 0 : map.size() / map.n();
  for (int n = 0; n < map.n(); ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += map.sample(n)[i];
    s[n] = acc / static_cast<double>(per);
  }
  return s;
}

template <typename T>
struct GateLoss {
  double value = 0.0;
  Tensor<T> grad_clean;
  Tensor<T> grad_noisy;
};

/// Batch mean of gate_loss over paired clean / noisy maps.
template <typename T>
GateLoss<T> gate_batch_loss(const Tensor<T>& map_clean, const Tensor<T>& map_noisy) {
  require_same_shape(map_clean, map_noisy, "gate_batch_loss");
  GateLoss<T> out{0.0, Tensor<T>(map_clean.shape()), Tensor<T>(map_noisy.shape())};
  const auto sc = image_scores(map_clean);
  const auto sn = image_scores(map_noisy);
  const int batch = map_clean.n();
  if (batch == 0) return out;
  const std::size_t per = map_clean.size() / batch;
  for (int n = 0; n < batch; ++n) {
    const double pc = clamp_prob(sc[n]);
    const double pn = clamp_prob(sn[n]);
    out.value += gate_loss(sc[n], sn[n]);
    const T gc = static_cast<T>(-1.0 / (pc * batch * per));
    const T gn = static_cast<T>(1.0 / ((1.0 - pn) * batch * per));
    std::fill(out.grad_clean.sample(n), out.grad_clean.sample(n) + per, gc);
    std::fill(out.grad_noisy.sample(n), out.grad_noisy.sample(n) + per, gn);
  }
  out.value /= batch;
  return out;
}

// ---------------------------------------------------------------------------
// Classification

/// Mean softmax cross-entropy of (n, classes, 1, 1) logits.
template <typename T>
LossGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != logits.n()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(logits.n()));
  }
  LossGrad<T> out{0.0, Tensor<T>(logits.shape())};
  const int k = logits.c();
  const int batch = logits.n();
  std::vector<double> p(k);
  for (int n = 0; n < batch; ++n) {
    const T* z = logits.sample(n);
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += p[j] = std::exp(z[j] - zmax);
    const int y = labels[n];
    if (y < 0 || y >= k) throw std::out_of_range("label out of range");
    out.value -= std::log(p[y] / sum);
    T* g = out.grad.sample(n);
    for (int j = 0; j < k; ++j) {
      g[j] = static_cast<T>((p[j] / sum - (j == y ? 1.0 : 0.0)) / batch);
    }
  }
  if (batch > 0) out.value /= batch;
  return out;
}

}  // namespace mope

#endif  // MOPE_LOSSES_HPP_

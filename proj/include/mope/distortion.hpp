#ifndef MOPE_DISTORTION_HPP_
#define MOPE_DISTORTION_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mope/ops.hpp"
#include "mope/tensor.hpp"

namespace mope {

using Rng = std::mt19937_64;

struct DistortionConfig {
  double max_sigma = 0.15;
  std::vector<int> lowres_factors{2, 4};
  std::uint64_t seed = 0;
};

/// Zero-mean Gaussian field, independent per pixel and channel.
inline Tensor<float> sample_noise(const Shape& shape, double sigma, Rng& rng) {
  if (sigma < 0.0) {
    throw std::invalid_argument("sigma must be >= 0, got " + std::to_string(sigma));
  }
  Tensor<float> n(shape);
  if (sigma == 0.0) return n;
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : n.values()) v = static_cast<float>(dist(rng));
  return n;
}

/// y = clip(x + n, 0, 1). Identity (bit-exact) at sigma = 0.
inline Tensor<float> add_gaussian_noise(const Tensor<float>& x, double sigma,
                                        Rng& rng) {
  if (sigma < 0.0) {
    throw std::invalid_argument("sigma must be >= 0, got " + std::to_string(sigma));
  }
  if (sigma == 0.0) return x;
  Tensor<float> y = sample_noise(x.shape(), sigma, rng);
  add_inplace(y, x);
  return clip(std::move(y), 0.0f, 1.0f);
}

/// Bilinear downsample by `factor`, then bilinear upsample to the input size.
inline Tensor<float> lowres_roundtrip(const Tensor<float>& x, int factor) {
  if (factor < 1 || x.h() % factor != 0 || x.w() % factor != 0) {
    throw std::invalid_argument("lowres factor " + std::to_string(factor) +
                                " does not divide " + std::to_string(x.h()) +
                                "x" + std::to_string(x.w()));
  }
  if (factor == 1) return x;
  const Tensor<float> small =
      resize(x, x.h() / factor, x.w() / factor, ResizeMode::bilinear);
  return resize(small, x.h(), x.w(), ResizeMode::bilinear);
}

struct TrainingPair {
  Tensor<float> base;   // clean image or its low-resolution round trip
  Tensor<float> noisy;  // base with Gaussian noise
  double sigma = 0.0;
  int factor = 1;       // 1 = clean base
};

/// Uniform choice over {clean} and each low-res factor, then noise with
/// sigma ~ U[0, max_sigma].
inline TrainingPair sample_training_pair(const Tensor<float>& clean,
                                         const DistortionConfig& cfg, Rng& rng) {
  TrainingPair pair;
  const int options = 1 + static_cast<int>(cfg.lowres_factors.size());
  const int pick = std::uniform_int_distribution<int>(0, options - 1)(rng);
  pair.factor = pick == 0 ? 1 : cfg.lowres_factors[pick - 1];
  pair.base = pick == 0 ? clean : lowres_roundtrip(clean, pair.factor);
  pair.sigma = std::uniform_real_distribution<double>(0.0, cfg.max_sigma)(rng);
  pair.noisy = add_gaussian_noise(pair.base, pair.sigma, rng);
  return pair;
}

/// Generator for data worker `index`: base seed plus worker index.
inline Rng worker_rng(std::uint64_t base_seed, std::uint64_t index) {
  return Rng(base_seed + index);
}

}  // namespace mope

#endif  // MOPE_DISTORTION_HPP_

#ifndef MOPE_MODELS_HPP_
#define MOPE_MODELS_HPP_

// Network descriptions for the pre-processing mixture: the skip-connected
// denoiser, the patch-scoring gate, the discriminator that trains the
// denoiser, and a small downstream classifier.

#include <stdexcept>

#include "mope/network.hpp"

namespace mope {

inline constexpr double kLeakySlope = 0.2;

namespace detail {

inline LayerSpec lrelu() { return LayerSpec::act(Activation::leaky_relu, kLeakySlope); }

}  // namespace detail

/// Encoder-decoder with additive skips. Widths double at each stride-2
/// stage (16 -> 32 -> 64) and halve on the way back; 47,107 parameters.
///
///   0 box_filter            7 conv_t 64->32 s2      13 conv 16->3
///   1 conv 3->16            8 + layer 4             14 sigmoid
///   2 lrelu                 9 lrelu
///   3 conv 16->32 s2       10 conv_t 32->16 s2
///   4 lrelu                11 + layer 2
///   5 conv 32->64 s2       12 lrelu
///   6 lrelu
inline NetworkSpec build_denoiser() {
  using L = LayerSpec;
  NetworkSpec spec{"denoiser", 3, {}};
  spec.layers = {
      L::box_filter(),
      L::conv(3, 16, 3),
      detail::lrelu(),
      L::conv(16, 32, 3, 2),
      detail::lrelu(),
      L::conv(32, 64, 3, 2),
      detail::lrelu(),
      L::conv_transpose(64, 32, 3, 2, 4),
      L::add_skip(4),
      detail::lrelu(),
      L::conv_transpose(32, 16, 3, 2, 2),
      L::add_skip(2),
      detail::lrelu(),
      L::conv(16, 3, 3),
      L::act(Activation::sigmoid),
  };
  return spec;
}

namespace detail {

// Three stride-2 3x3 convs and a stride-1 scoring conv: 31x31 receptive
// field, one sigmoid score per patch.
inline NetworkSpec patch_scorer(const char* name) {
  using L = LayerSpec;
  NetworkSpec spec{name, 3, {}};
  spec.layers = {
      L::conv(3, 16, 3, 2),
      lrelu(),
      L::conv(16, 32, 3, 2),
      L::instance_norm(32),
      lrelu(),
      L::conv(32, 64, 3, 2),
      L::instance_norm(64),
      lrelu(),
      L::conv(64, 1, 3, 1),
      L::act(Activation::sigmoid),
  };
  return spec;
}

}  // namespace detail

/// Gate H: per-patch clean score map in (0, 1); 24,353 parameters.
inline NetworkSpec build_gating() { return detail::patch_scorer("gating"); }

/// Discriminator D: same topology as the gate, separate weights.
inline NetworkSpec build_discriminator() {
  return detail::patch_scorer("discriminator");
}

/// Downstream stand-in: four stride-2 conv blocks, global average pool and a
/// linear map (1x1 conv) to `num_classes` logits shaped (n, classes, 1, 1).
inline NetworkSpec build_classifier(int num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("build_classifier: need at least 2 classes");
  }
  using L = LayerSpec;
  NetworkSpec spec{"classifier", 3, {}};
  spec.layers = {
      L::conv(3, 24, 3, 2),
      detail::lrelu(),
      L::conv(24, 48, 3, 2),
      detail::lrelu(),
      L::conv(48, 96, 3, 2),
      detail::lrelu(),
      L::conv(96, 96, 3, 2),
      detail::lrelu(),
      L::global_avg_pool(),
      L::conv(96, num_classes, 1),
  };
  return spec;
}

struct ModelCatalog {
  NetworkSpec denoiser = build_denoiser();
  NetworkSpec gating = build_gating();
  NetworkSpec discriminator = build_discriminator();
  NetworkSpec classifier = build_classifier(10);
};

}  // namespace mope

#endif  // MOPE_MODELS_HPP_

#ifndef MOPE_ROUTER_HPP_
#define MOPE_ROUTER_HPP_

// Inference-time mixture of pre-processing experts: the gate scores an
// image, and exactly one expert (identity, 3x3 mean filter, or denoiser)
// produces the image handed to the downstream network.

#include <algorithm>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mope/evalkit.hpp"
#include "mope/network.hpp"
#include "mope/ops.hpp"

namespace mope {

enum class Expert { identity, average_filter, denoiser };

inline const char* expert_name(Expert e) {
  switch (e) {
    case Expert::identity: return "identity";
    case Expert::average_filter: return "average_filter";
    case Expert::denoiser: return "denoiser";
  }
  return "?";
}

struct GateDecision {
  double score = 0.0;  // mean of the patch map
  Expert chosen = Expert::identity;
  double map_min = 0.0;
  double map_mean = 0.0;
  double map_max = 0.0;
};

struct MopeConfig {
  double threshold = 0.5;
  Expert noisy_expert = Expert::denoiser;
};

inline void check_mope_config(const MopeConfig& cfg) {
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie in (0, 1)");
  }
  if (cfg.noisy_expert == Expert::identity) {
    throw std::invalid_argument("noisy expert must be average_filter or denoiser");
  }
}

/// score > threshold routes to identity; otherwise (ties included) to the
/// noisy expert.
inline Expert route_for_score(double score, const MopeConfig& cfg) {
  return score > cfg.threshold ? Expert::identity : cfg.noisy_expert;
}

/// Decision from an already-computed (1, 1, h, w) patch map.
template <typename T>
GateDecision decide_from_map(const Tensor<T>& map, const MopeConfig& cfg) {
  if (map.empty()) throw ShapeError("gate map is empty");
  GateDecision d;
  double sum = 0.0;
  d.map_min = map[0];
  d.map_max = map[0];
  for (T v : map.values()) {
    sum += v;
    d.map_min = std::min<double>(d.map_min, v);
    d.map_max = std::max<double>(d.map_max, v);
  }
  d.map_mean = sum / static_cast<double>(map.size());
  d.score = d.map_mean;
  d.chosen = route_for_score(d.score, cfg);
  return d;
}

template <typename T>
GateDecision gate_decide(const Network& gate, const ParamStore<T>& params,
                         const Tensor<T>& image, const MopeConfig& cfg) {
  if (image.n() != 1) throw ShapeError("gate_decide: expects a single image");
  return decide_from_map(forward(gate, params, image).output, cfg);
}

/// Gate + experts with loaded parameters. Read-only after construction.
class Mope {
 public:
  Mope(Network gate, ParamStore<float> gate_params, Network denoiser,
       ParamStore<float> denoiser_params, MopeConfig cfg = {})
      : gate_(std::move(gate)),
        gate_params_(std::move(gate_params)),
        denoiser_(std::move(denoiser)),
        denoiser_params_(std::move(denoiser_params)),
        cfg_(cfg) {
    check_mope_config(cfg_);
    check_params(gate_, gate_params_);
    check_params(denoiser_, denoiser_params_);
  }

  const MopeConfig& config() const { return cfg_; }
  const Network& gate() const { return gate_; }
  const Network& denoiser() const { return denoiser_; }
  const ParamStore<float>& gate_params() const { return gate_params_; }
  const ParamStore<float>& denoiser_params() const { return denoiser_params_; }

  GateDecision decide(const Tensor<float>& image) const {
    return gate_decide(gate_, gate_params_, image, cfg_);
  }

  /// Output of one expert, bypassing the gate.
  Tensor<float> apply(const Tensor<float>& image, Expert e) const {
    switch (e) {
      case Expert::identity:
        return image;
      case Expert::average_filter:
        return box_filter3(image);
      case Expert::denoiser:
        return forward(denoiser_, denoiser_params_, image).output;
    }
    return image;
  }

  Tensor<float> preprocess(const Tensor<float>& image, GateDecision* decision = nullptr) const {
    const GateDecision d = decide(image);
    if (decision) *decision = d;
    return apply(image, d.chosen);
  }

 private:
  Network gate_;
  ParamStore<float> gate_params_;
  Network denoiser_;
  ParamStore<float> denoiser_params_;
  MopeConfig cfg_;
};

struct RoutedBatch {
  std::vector<Tensor<float>> images;
  std::vector<GateDecision> decisions;
};

/// Each image (1, 3, h, w) is gated and processed independently.
inline RoutedBatch preprocess_batch(const Mope& mope, const std::vector<Tensor<float>>& images) {
  RoutedBatch out;
  out.images.reserve(images.size());
  out.decisions.reserve(images.size());
  for (const auto& img : images) {
    GateDecision d;
    out.images.push_back(mope.preprocess(img, &d));
    out.decisions.push_back(d);
  }
  return out;
}

inline GateReport gate_report(const std::vector<GateDecision>& decisions,
                              const std::vector<bool>& is_noisy) {
  std::vector<bool> routed(decisions.size());
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    routed[i] = decisions[i].chosen != Expert::identity;
  }
  return gate_report(routed, is_noisy);
}

/// Decision log CSV: image_id,score,expert
inline void write_decision_log(std::ostream& out, const std::vector<std::string>& ids,
                               const std::vector<GateDecision>& decisions) {
  if (ids.size() != decisions.size()) {
    throw std::invalid_argument("decision log: id/decision counts differ");
  }
  out << "image_id,score,expert\n";
  const auto old = out.precision(9);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << "," << decisions[i].score << "," << expert_name(decisions[i].chosen) << "\n";
  }
  out.precision(old);
}

}  // namespace mope

#endif  // MOPE_ROUTER_HPP_

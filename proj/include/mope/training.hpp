#ifndef MOPE_TRAINING_HPP_
#define MOPE_TRAINING_HPP_

// Training procedures: adversarial denoiser (alternating D / G steps), gate
// classification, and the downstream classifier with or without the
// pre-processing mixture in front of it.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mope/distortion.hpp"
#include "mope/evalkit.hpp"
#include "mope/losses.hpp"
#include "mope/network.hpp"
#include "mope/optim.hpp"
#include "mope/router.hpp"
#include "mope/synth.hpp"

namespace mope {

struct TrainConfig {
  int iterations = 1000;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::vector<LrDrop> lr_schedule;
  OptimizerConfig optimizer;
  double lambda_sim = 1.0;
  std::uint64_t seed = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(int iteration, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

struct LossRecord {
  int iteration = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double loss_sim = 0.0;
  double lr = 0.0;
};

/// CSV columns: iteration,loss_d,loss_g,loss_sim,lr
inline void write_loss_history(std::ostream& out, const std::vector<LossRecord>& history) {
  out << "iteration,loss_d,loss_g,loss_sim,lr\n";
  const auto old = out.precision(9);
  for (const auto& r : history) {
    out << r.iteration << "," << r.loss_d << "," << r.loss_g << "," << r.loss_sim << ","
        << r.lr << "\n";
  }
  out.precision(old);
}

struct ScalarRecord {
  int iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};

inline void write_scalar_history(std::ostream& out, const std::vector<ScalarRecord>& history) {
  out << "iteration,loss,lr\n";
  const auto old = out.precision(9);
  for (const auto& r : history) out << r.iteration << "," << r.loss << "," << r.lr << "\n";
  out.precision(old);
}

// ---------------------------------------------------------------------------
// Data

struct PairBatch {
  Tensor<float> base;   // targets: clean or low-res round trip
  Tensor<float> noisy;  // base plus noise
  std::vector<double> sigma;
};

template <typename S>
concept PairSource = requires(S s, int batch) {
  { s.next(batch) } -> std::same_as<PairBatch>;
};

/// Random crop of the same window from every tensor in `items`.
inline std::vector<Tensor<float>> crop_same(const std::vector<const Tensor<float>*>& items,
                                            int size, Rng& rng) {
  const Tensor<float>& first = *items.front();
  const int y0 = std::uniform_int_distribution<int>(0, first.h() - size)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, first.w() - size)(rng);
  std::vector<Tensor<float>> out;
  for (const auto* t : items) {
    Tensor<float> c(Shape{t->n(), t->c(), size, size});
    for (int n = 0; n < t->n(); ++n) {
      for (int ch = 0; ch < t->c(); ++ch) {
        for (int y = 0; y < size; ++y) {
          const float* src = &(*t)(n, ch, y0 + y, x0);
          std::copy(src, src + size, &c(n, ch, y, 0));
        }
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Draws clean images uniformly from a pool and distorts each with
/// sample_training_pair; optionally crops a random square window.
class DistortedPairStream {
 public:
  DistortedPairStream(const std::vector<Tensor<float>>& images, DistortionConfig cfg,
                      int crop = 0)
      : images_(images), cfg_(std::move(cfg)), crop_(crop), rng_(cfg_.seed) {
    if (images_.empty()) throw std::invalid_argument("pair stream needs at least one image");
  }

  PairBatch next(int batch) {
    std::vector<Tensor<float>> bases, noisies;
    PairBatch out;
    std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
    for (int i = 0; i < batch; ++i) {
      const Tensor<float>& clean = images_[pick(rng_)];
      TrainingPair p = sample_training_pair(clean, cfg_, rng_);
      if (crop_ > 0 && (crop_ < clean.h() || crop_ < clean.w())) {
        auto cropped = crop_same({&p.base, &p.noisy}, crop_, rng_);
        p.base = std::move(cropped[0]);
        p.noisy = std::move(cropped[1]);
      }
      bases.push_back(std::move(p.base));
      noisies.push_back(std::move(p.noisy));
      out.sigma.push_back(p.sigma);
    }
    out.base = stack(bases);
    out.noisy = stack(noisies);
    return out;
  }

 private:
  const std::vector<Tensor<float>>& images_;
  DistortionConfig cfg_;
  int crop_;
  Rng rng_;
};

namespace detail {

inline void check_finite(double v, int iteration, const char* what) {
  if (!std::isfinite(v)) throw TrainingError(iteration, std::string("non-finite ") + what);
}

inline void check_config(const TrainConfig& cfg) {
  if (cfg.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.learning_rate < 0) throw std::invalid_argument("learning_rate must be >= 0");
  if (cfg.lambda_sim < 0) throw std::invalid_argument("lambda_sim must be >= 0");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Denoiser

/// Alternates one discriminator step (on real targets vs. detached G outputs)
/// with one generator step on -log D(G(y)) + lambda * mse(G(y), x).
template <PairSource Stream>
std::vector<LossRecord> train_denoiser(const Network& g_net, ParamStore<float>& g_params,
                                       const Network& d_net, ParamStore<float>& d_params,
                                       Stream& stream, const TrainConfig& cfg) {
  detail::check_config(cfg);
  check_params(g_net, g_params);
  check_params(d_net, d_params);
  auto g_state = init_optimizer_state(g_params);
  auto d_state = init_optimizer_state(d_params);
  std::vector<LossRecord> history;
  history.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr = scheduled_lr(cfg.learning_rate, cfg.lr_schedule, it);
    const PairBatch batch = stream.next(cfg.batch_size);
    auto g_fwd = forward(g_net, g_params, batch.noisy, true);
    const Tensor<float>& fake = g_fwd.output;

    // Discriminator: raise D(x), lower D(G(y)).
    auto d_real = forward(d_net, d_params, batch.base, true);
    auto d_fake = forward(d_net, d_params, fake, true);
    auto dl = discriminator_loss(d_real.output, d_fake.output);
    detail::check_finite(dl.value, it, "discriminator loss");
    auto d_grads = backward(d_net, d_params, d_real.tape, dl.grad_real).grads;
    auto d_grads_fake = backward(d_net, d_params, d_fake.tape, dl.grad_fake).grads;
    for (auto& [k, t] : d_grads) add_inplace(t, d_grads_fake.at(k));
    optimizer_step(cfg.optimizer, d_params, d_grads, d_state, lr);

    // Generator against the updated discriminator.
    auto d_on_fake = forward(d_net, d_params, fake, true);
    auto adv = generator_adversarial_loss(d_on_fake.output);
    auto sim = sim_loss_with_grad(fake, batch.base);
    const double g_total = total_loss(adv.value, sim.value, cfg.lambda_sim);
    detail::check_finite(g_total, it, "generator loss");
    Tensor<float> grad_fake = backward(d_net, d_params, d_on_fake.tape, adv.grad).grad_input;
    scale_inplace(sim.grad, static_cast<float>(cfg.lambda_sim));
    add_inplace(grad_fake, sim.grad);
    auto g_grads = backward(g_net, g_params, g_fwd.tape, grad_fake).grads;
    optimizer_step(cfg.optimizer, g_params, g_grads, g_state, lr);

    history.push_back({it, dl.value, adv.value, sim.value, lr});
  }
  return history;
}

// ---------------------------------------------------------------------------
// Gate

/// Trains H so clean (or low-res) bases score 1 and their noisy versions 0.
template <PairSource Stream>
std::vector<ScalarRecord> train_gate(const Network& h_net, ParamStore<float>& params,
                                     Stream& stream, const TrainConfig& cfg) {
  detail::check_config(cfg);
  check_params(h_net, params);
  auto state = init_optimizer_state(params);
  std::vector<ScalarRecord> history;
  history.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr = scheduled_lr(cfg.learning_rate, cfg.lr_schedule, it);
    const PairBatch batch = stream.next(cfg.batch_size);
    auto on_clean = forward(h_net, params, batch.base, true);
    auto on_noisy = forward(h_net, params, batch.noisy, true);
    auto loss = gate_batch_loss(on_clean.output, on_noisy.output);
    detail::check_finite(loss.value, it, "gate loss");
    auto grads = backward(h_net, params, on_clean.tape, loss.grad_clean).grads;
    auto grads_noisy = backward(h_net, params, on_noisy.tape, loss.grad_noisy).grads;
    for (auto& [k, t] : grads) add_inplace(t, grads_noisy.at(k));
    optimizer_step(cfg.optimizer, params, grads, state, lr);
    history.push_back({it, loss.value, lr});
  }
  return history;
}

/// Gate accuracy on each clean image and its sigma-noised copy.
inline GateReport evaluate_gate(const Network& h_net, const ParamStore<float>& params,
                                const std::vector<Tensor<float>>& clean, double sigma,
                                std::uint64_t seed, const MopeConfig& cfg = {}) {
  Rng rng(seed);
  std::vector<bool> routed, truth;
  for (const auto& img : clean) {
    for (bool noisy : {false, true}) {
      const Tensor<float> x = noisy ? add_gaussian_noise(img, sigma, rng) : img;
      const GateDecision d = gate_decide(h_net, params, x, cfg);
      routed.push_back(d.chosen != Expert::identity);
      truth.push_back(noisy);
    }
  }
  return gate_report(routed, truth);
}

// ---------------------------------------------------------------------------
// Downstream classifier

enum class AugmentMode { clean_only, augmented };

namespace detail {

// Epoch-wise shuffled index stream.
class IndexSampler {
 public:
  IndexSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }
  Rng& rng() { return rng_; }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// One SGD/Adam step of softmax cross-entropy on a batch.
inline double classifier_step(const Network& net, ParamStore<float>& params,
                              OptimizerState<float>& state, const TrainConfig& cfg,
                              const std::vector<Tensor<float>>& images,
                              const std::vector<int>& labels, int it) {
  const double lr = scheduled_lr(cfg.learning_rate, cfg.lr_schedule, it);
  auto fwd = forward(net, params, stack(images), true);
  auto loss = softmax_cross_entropy(fwd.output, std::span<const int>(labels));
  check_finite(loss.value, it, "classification loss");
  auto grads = backward(net, params, fwd.tape, loss.grad).grads;
  optimizer_step(cfg.optimizer, params, grads, state, lr);
  return loss.value;
}

// Fills a batch: clean images, or (base, noisy) pairs that both enter it.
template <typename Transform>
void fill_batch(const LabeledImages& data, IndexSampler& sampler, const TrainConfig& cfg,
                AugmentMode mode, const DistortionConfig& dcfg, Transform&& transform,
                std::vector<Tensor<float>>& images, std::vector<int>& labels) {
  images.clear();
  labels.clear();
  while (static_cast<int>(images.size()) < cfg.batch_size) {
    const std::size_t i = sampler.next();
    if (mode == AugmentMode::clean_only) {
      images.push_back(transform(data.images[i]));
      labels.push_back(data.labels[i]);
      continue;
    }
    TrainingPair p = sample_training_pair(data.images[i], dcfg, sampler.rng());
    images.push_back(transform(p.base));
    labels.push_back(data.labels[i]);
    if (static_cast<int>(images.size()) < cfg.batch_size) {
      images.push_back(transform(p.noisy));
      labels.push_back(data.labels[i]);
    }
  }
}

}  // namespace detail

/// Cross-entropy training on clean images only, or on the clean / low-res /
/// noisy augmentation mix.
inline std::vector<ScalarRecord> train_classifier(const Network& net, ParamStore<float>& params,
                                                  const LabeledImages& data,
                                                  const TrainConfig& cfg, AugmentMode mode,
                                                  const DistortionConfig& dcfg = {}) {
  detail::check_config(cfg);
  check_params(net, params);
  if (data.size() == 0) throw std::invalid_argument("train_classifier: empty dataset");
  auto state = init_optimizer_state(params);
  detail::IndexSampler sampler(data.size(), cfg.seed);
  std::vector<ScalarRecord> history;
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (int it = 0; it < cfg.iterations; ++it) {
    detail::fill_batch(data, sampler, cfg, mode, dcfg,
                       [](const Tensor<float>& x) { return x; }, images, labels);
    const double loss = detail::classifier_step(net, params, state, cfg, images, labels, it);
    history.push_back({it, loss, scheduled_lr(cfg.learning_rate, cfg.lr_schedule, it)});
  }
  return history;
}

/// Fine-tunes the classifier on augmented data routed through the mixture.
/// Only the classifier's cross-entropy drives updates; the gate and denoiser
/// inside `mope` are read-only.
inline std::vector<ScalarRecord> finetune_downstream(const Network& net,
                                                     ParamStore<float>& params,
                                                     const Mope& mope,
                                                     const LabeledImages& data,
                                                     const TrainConfig& cfg,
                                                     const DistortionConfig& dcfg = {}) {
  detail::check_config(cfg);
  check_params(net, params);
  if (data.size() == 0) throw std::invalid_argument("finetune_downstream: empty dataset");
  auto state = init_optimizer_state(params);
  detail::IndexSampler sampler(data.size(), cfg.seed);
  std::vector<ScalarRecord> history;
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (int it = 0; it < cfg.iterations; ++it) {
    detail::fill_batch(data, sampler, cfg, AugmentMode::augmented, dcfg,
                       [&](const Tensor<float>& x) { return mope.preprocess(x); }, images,
                       labels);
    const double loss = detail::classifier_step(net, params, state, cfg, images, labels, it);
    history.push_back({it, loss, scheduled_lr(cfg.learning_rate, cfg.lr_schedule, it)});
  }
  return history;
}

/// Predicted class of every image, evaluated in chunks.
inline std::vector<int> predict(const Network& net, const ParamStore<float>& params,
                                const std::vector<Tensor<float>>& images, int chunk = 64) {
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t b = 0; b < images.size(); b += chunk) {
    const std::size_t e = std::min(images.size(), b + chunk);
    std::vector<Tensor<float>> part(images.begin() + b, images.begin() + e);
    const auto logits = forward(net, params, stack(part)).output;
    for (int n = 0; n < logits.n(); ++n) out.push_back(argmax_class(logits, n));
  }
  return out;
}

inline double accuracy_of(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy_of: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Held-out images under the three evaluation conditions, sharing labels.
struct EvalSets {
  std::vector<Tensor<float>> clean;
  std::vector<Tensor<float>> lowres;
  std::vector<Tensor<float>> noisy;
  std::vector<int> labels;
};

inline EvalSets make_eval_sets(const LabeledImages& data, int lowres_factor, double sigma,
                               std::uint64_t seed) {
  EvalSets s;
  Rng rng(seed);
  s.clean = data.images;
  s.labels = data.labels;
  for (const auto& x : data.images) {
    s.lowres.push_back(lowres_roundtrip(x, lowres_factor));
    s.noisy.push_back(add_gaussian_noise(x, sigma, rng));
  }
  return s;
}

struct AccuracyRow {
  std::string model;
  double clean = 0.0;
  double lowres = 0.0;
  double noisy = 0.0;
};

/// Accuracy of `net` under each condition; with `mope` set, every image is
/// routed through the mixture first.
inline AccuracyRow evaluate_classifier(const std::string& model, const Network& net,
                                       const ParamStore<float>& params, const EvalSets& sets,
                                       const Mope* mope = nullptr) {
  auto run = [&](const std::vector<Tensor<float>>& images) {
    if (!mope) return accuracy_of(predict(net, params, images), sets.labels);
    return accuracy_of(predict(net, params, preprocess_batch(*mope, images).images), sets.labels);
  };
  return {model, run(sets.clean), run(sets.lowres), run(sets.noisy)};
}

/// Rows of models, columns clean / lowres / noisy, accuracies in percent.
inline std::string format_accuracy_table(const std::vector<AccuracyRow>& rows, int lowres_factor,
                                         double sigma) {
  std::ostringstream os;
  std::ostringstream noisy_head, low_head;
  noisy_head << "sigma=" << sigma;
  low_head << "lowres x" << lowres_factor;
  os << std::left << std::setw(16) << "model" << std::right << std::setw(10) << "clean"
     << std::setw(12) << low_head.str() << std::setw(12) << noisy_head.str() << "\n";
  os << std::fixed << std::setprecision(1);
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.model << std::right << std::setw(10) << 100 * r.clean
       << std::setw(12) << 100 * r.lowres << std::setw(12) << 100 * r.noisy << "\n";
  }
  return os.str();
}

inline void write_accuracy_csv(std::ostream& out, const std::vector<AccuracyRow>& rows) {
  out << "model,clean,lowres,noisy\n";
  const auto old = out.precision(9);
  for (const auto& r : rows) {
    out << r.model << "," << r.clean << "," << r.lowres << "," << r.noisy << "\n";
  }
  out.precision(old);
}

}  // namespace mope

#endif  // MOPE_TRAINING_HPP_

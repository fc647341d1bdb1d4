#ifndef MOPE_NETWORK_HPP_
#define MOPE_NETWORK_HPP_

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mope/ops.hpp"
#include "mope/tensor.hpp"

namespace mope {

enum class LayerKind {
  conv,
  conv_transpose,
  instance_norm,
  activation,
  box_filter,
  resize,
  add_skip,
  concat_skip,
  global_avg_pool,
};

/// Skip links use this index to refer to the network input.
inline constexpr int kNetworkInput = -1;

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  // conv / conv_transpose / instance_norm
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  bool bias = true;
  // conv_transpose: choose output_padding so the spatial size equals the
  // output of this earlier layer (lets the decoder undo odd downsampling).
  std::optional<int> match_size_of;
  // activation
  Activation activation = Activation::relu;
  double slope = 0.0;
  // resize
  double scale = 1.0;
  ResizeMode resize_mode = ResizeMode::bilinear;
  // add_skip / concat_skip
  int from = kNetworkInput;

  static LayerSpec conv(int in, int out, int k, int stride = 1) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = k;
    l.stride = stride;
    l.pad = k / 2;
    return l;
  }
  static LayerSpec conv_transpose(int in, int out, int k, int stride,
                                  std::optional<int> match = std::nullopt) {
    LayerSpec l = conv(in, out, k, stride);
    l.kind = LayerKind::conv_transpose;
    l.match_size_of = match;
    return l;
  }
  static LayerSpec instance_norm(int channels) {
    LayerSpec l;
    l.kind = LayerKind::instance_norm;
    l.in_channels = l.out_channels = channels;
    return l;
  }
  static LayerSpec act(Activation kind, double slope = 0.0) {
    LayerSpec l;
    l.kind = LayerKind::activation;
    l.activation = kind;
    l.slope = slope;
    return l;
  }
  static LayerSpec box_filter() {
    LayerSpec l;
    l.kind = LayerKind::box_filter;
    l.kernel = 3;
    return l;
  }
  static LayerSpec resize(double scale, ResizeMode mode) {
    LayerSpec l;
    l.kind = LayerKind::resize;
    l.scale = scale;
    l.resize_mode = mode;
    return l;
  }
  static LayerSpec add_skip(int from) {
    LayerSpec l;
    l.kind = LayerKind::add_skip;
    l.from = from;
    return l;
  }
  static LayerSpec concat_skip(int from) {
    LayerSpec l;
    l.kind = LayerKind::concat_skip;
    l.from = from;
    return l;
  }
  static LayerSpec global_avg_pool() {
    LayerSpec l;
    l.kind = LayerKind::global_avg_pool;
    return l;
  }

  bool learnable() const {
    return kind == LayerKind::conv || kind == LayerKind::conv_transpose ||
           kind == LayerKind::instance_norm;
  }
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::conv_transpose: return "conv_transpose";
    case LayerKind::instance_norm: return "instance_norm";
    case LayerKind::activation: return "activation";
    case LayerKind::box_filter: return "box_filter";
    case LayerKind::resize: return "resize";
    case LayerKind::add_skip: return "add_skip";
    case LayerKind::concat_skip: return "concat_skip";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "?";
}

struct NetworkSpec {
  std::string name;
  int input_channels = 3;
  std::vector<LayerSpec> layers;
};

/// Rejected network description; `layer` is the first offending index.
class SpecError : public std::invalid_argument {
 public:
  SpecError(int layer, const std::string& what)
      : std::invalid_argument("layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

/// A NetworkSpec whose channel bookkeeping has been checked.
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) { validate(); }

  const NetworkSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  int size() const { return static_cast<int>(spec_.layers.size()); }
  const LayerSpec& layer(int i) const { return spec_.layers[i]; }

  /// Channels produced by layer i (kNetworkInput gives the input channels).
  int channels_after(int i) const {
    return i == kNetworkInput ? spec_.input_channels : channels_[i];
  }
  int output_channels() const { return channels_after(size() - 1); }

  /// Output shape of every layer for a given input shape.
  std::vector<Shape> infer_shapes(const Shape& input) const {
    if (input.c != spec_.input_channels) {
      throw ShapeError(spec_.name + ": input has " + std::to_string(input.c) +
                       " channels, network expects " +
                       std::to_string(spec_.input_channels));
    }
    std::vector<Shape> out;
    out.reserve(spec_.layers.size());
    auto shape_of = [&](int i) { return i == kNetworkInput ? input : out[i]; };
    for (int i = 0; i < size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      Shape s = shape_of(i - 1);
      auto fail = [&](const std::string& msg) {
        throw ShapeError(spec_.name + " layer " + std::to_string(i) + " (" +
                         layer_kind_name(l.kind) + "): " + msg);
      };
      switch (l.kind) {
        case LayerKind::conv:
          if (s.h + 2 * l.pad < l.kernel || s.w + 2 * l.pad < l.kernel) {
            fail("spatial size " + s.str() + " smaller than kernel");
          }
          s.c = l.out_channels;
          s.h = conv_output_size(s.h, l.kernel, l.stride, l.pad);
          s.w = conv_output_size(s.w, l.kernel, l.stride, l.pad);
          break;
        case LayerKind::conv_transpose: {
          const int op_h = output_padding(i, s.h, shape_of, true);
          const int op_w = output_padding(i, s.w, shape_of, false);
          s.c = l.out_channels;
          s.h = conv_transpose_output_size(s.h, l.kernel, l.stride, l.pad, op_h);
          s.w = conv_transpose_output_size(s.w, l.kernel, l.stride, l.pad, op_w);
          break;
        }
        case LayerKind::resize:
          s.h = resized_extent(s.h, l.scale);
          s.w = resized_extent(s.w, l.scale);
          if (s.h < 1 || s.w < 1) fail("resize produces an empty image");
          break;
        case LayerKind::add_skip: {
          const Shape src = shape_of(l.from);
          if (src != s) {
            fail("skip source " + src.str() + " does not match " + s.str());
          }
          break;
        }
        case LayerKind::concat_skip: {
          const Shape src = shape_of(l.from);
          if (src.h != s.h || src.w != s.w) {
            fail("skip source " + src.str() + " spatially differs from " +
                 s.str());
          }
          s.c += src.c;
          break;
        }
        case LayerKind::global_avg_pool:
          s.h = s.w = 1;
          break;
        case LayerKind::instance_norm:
        case LayerKind::activation:
        case LayerKind::box_filter:
          break;
      }
      out.push_back(s);
    }
    return out;
  }

  /// output_padding of a conv_transpose layer given its input extent.
  template <typename ShapeOf>
  int output_padding(int i, int in_extent, ShapeOf&& shape_of,
                     bool height) const {
    const LayerSpec& l = spec_.layers[i];
    if (!l.match_size_of) return 0;
    const Shape target = shape_of(*l.match_size_of);
    const int base =
        conv_transpose_output_size(in_extent, l.kernel, l.stride, l.pad, 0);
    const int op = (height ? target.h : target.w) - base;
    if (op < 0 || op >= l.stride) {
      throw ShapeError(spec_.name + " layer " + std::to_string(i) +
                       " (conv_transpose): cannot reach size of layer " +
                       std::to_string(*l.match_size_of));
    }
    return op;
  }

  static int resized_extent(int extent, double scale) {
    return static_cast<int>(std::lround(extent * scale));
  }

 private:
  void validate() {
    if (spec_.input_channels < 1) {
      throw SpecError(0, "network input must have at least one channel");
    }
    channels_.clear();
    int c = spec_.input_channels;
    for (int i = 0; i < size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::conv_transpose:
          if (l.in_channels != c) {
            throw SpecError(i, std::string(layer_kind_name(l.kind)) +
                                   " expects " + std::to_string(l.in_channels) +
                                   " input channels but is fed " +
                                   std::to_string(c));
          }
          if (l.out_channels < 1) throw SpecError(i, "out_channels must be >= 1");
          if (l.kernel < 1 || l.kernel % 2 == 0) {
            throw SpecError(i, "kernel size must be odd");
          }
          if (l.stride < 1 || l.pad < 0) throw SpecError(i, "bad stride/pad");
          if (l.kind == LayerKind::conv_transpose && l.match_size_of &&
              (*l.match_size_of < kNetworkInput || *l.match_size_of >= i)) {
            throw SpecError(i, "match_size_of must name an earlier layer");
          }
          c = l.out_channels;
          break;
        case LayerKind::instance_norm:
          if (l.in_channels != c) {
            throw SpecError(i, "instance_norm expects " +
                                   std::to_string(l.in_channels) +
                                   " channels but is fed " + std::to_string(c));
          }
          break;
        case LayerKind::add_skip:
        case LayerKind::concat_skip: {
          if (l.from < kNetworkInput || l.from >= i) {
            throw SpecError(i, "skip source must be an earlier layer");
          }
          const int src = l.from == kNetworkInput ? spec_.input_channels
                                                  : channels_[l.from];
          if (l.kind == LayerKind::add_skip && src != c) {
            throw SpecError(i, "add_skip source has " + std::to_string(src) +
                                   " channels, expected " + std::to_string(c));
          }
          if (l.kind == LayerKind::concat_skip) c += src;
          break;
        }
        case LayerKind::resize:
          if (!(l.scale > 0.0)) throw SpecError(i, "resize scale must be > 0");
          break;
        case LayerKind::activation:
        case LayerKind::box_filter:
        case LayerKind::global_avg_pool:
          break;
      }
      channels_.push_back(c);
    }
  }

  NetworkSpec spec_;
  std::vector<int> channels_;
};

// ---------------------------------------------------------------------------
// Parameters

enum class ParamRole : std::uint8_t { weight, bias, gamma, beta };

inline const char* role_name(ParamRole r) {
  switch (r) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::gamma: return "gamma";
    case ParamRole::beta: return "beta";
  }
  return "?";
}

struct ParamKey {
  int layer = 0;
  ParamRole role = ParamRole::weight;

  friend auto operator<=>(const ParamKey&, const ParamKey&) = default;

  /// "layer<index>.<role>", the name used in weight files.
  std::string name() const {
    return "layer" + std::to_string(layer) + "." + role_name(role);
  }

  static std::optional<ParamKey> parse(const std::string& name) {
    constexpr std::string_view prefix = "layer";
    if (name.rfind(prefix, 0) != 0) return std::nullopt;
    const auto dot = name.find('.');
    if (dot == std::string::npos || dot == prefix.size()) return std::nullopt;
    int layer = 0;
    for (std::size_t i = prefix.size(); i < dot; ++i) {
      if (name[i] < '0' || name[i] > '9' || layer > 100000) return std::nullopt;
      layer = layer * 10 + (name[i] - '0');
    }
    const std::string role = name.substr(dot + 1);
    for (ParamRole r : {ParamRole::weight, ParamRole::bias, ParamRole::gamma,
                        ParamRole::beta}) {
      if (role == role_name(r)) return ParamKey{layer, r};
    }
    return std::nullopt;
  }
};

/// Shape used for per-channel vectors (bias, gamma, beta).
inline Shape vector_shape(int length) { return Shape{length, 1, 1, 1}; }

/// Named parameter tensors of one network, keyed by (layer, role).
template <typename T>
class ParamStore {
 public:
  using Map = std::map<ParamKey, Tensor<T>>;

  bool contains(ParamKey k) const { return map_.count(k) != 0; }
  const Tensor<T>& at(ParamKey k) const {
    auto it = map_.find(k);
    if (it == map_.end()) {
      throw std::out_of_range("missing parameter " + k.name());
    }
    return it->second;
  }
  Tensor<T>& at(ParamKey k) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(k));
  }
  void set(ParamKey k, Tensor<T> t) { map_[k] = std::move(t); }

  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }
  auto begin() { return map_.begin(); }
  auto end() { return map_.end(); }
  std::size_t tensor_count() const { return map_.size(); }

  /// Total number of scalar parameters.
  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& [k, t] : map_) n += t.size();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore z;
    for (const auto& [k, t] : map_) z.set(k, Tensor<T>(t.shape()));
    return z;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, t] : map_) out.set(k, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.map_ == b.map_;
  }

 private:
  Map map_;
};

/// Checks that `params` has exactly the tensors `net` needs, with the right
/// shapes. Throws SpecError naming the first offending layer.
template <typename T>
void check_params(const Network& net, const ParamStore<T>& params) {
  std::size_t expected = 0;
  auto require = [&](int i, ParamRole r, const Shape& s) {
    const ParamKey k{i, r};
    if (!params.contains(k)) throw SpecError(i, "missing parameter " + k.name());
    if (params.at(k).shape() != s) {
      throw SpecError(i, "parameter " + k.name() + " has shape " +
                             params.at(k).shape().str() + ", expected " +
                             s.str());
    }
    ++expected;
  };
  for (int i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    if (l.kind == LayerKind::conv) {
      require(i, ParamRole::weight,
              Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
      if (l.bias) require(i, ParamRole::bias, vector_shape(l.out_channels));
    } else if (l.kind == LayerKind::conv_transpose) {
      require(i, ParamRole::weight,
              Shape{l.in_channels, l.out_channels, l.kernel, l.kernel});
      if (l.bias) require(i, ParamRole::bias, vector_shape(l.out_channels));
    } else if (l.kind == LayerKind::instance_norm) {
      require(i, ParamRole::gamma, vector_shape(l.in_channels));
      require(i, ParamRole::beta, vector_shape(l.in_channels));
    }
  }
  if (expected != params.tensor_count()) {
    throw SpecError(net.size(), "parameter store holds " +
                                    std::to_string(params.tensor_count()) +
                                    " tensors, network uses " +
                                    std::to_string(expected));
  }
}

template <typename T>
struct BuiltNetwork {
  Network net;
  ParamStore<T> params;
};

/// Validates `spec` and initializes its parameters: He-normal conv weights
/// (variance 2 / (k^2 * c_in)), zero biases, unit gamma, zero beta.
/// Deterministic per seed.
template <typename T = float>
BuiltNetwork<T> build(NetworkSpec spec, std::uint64_t seed) {
  Network net(std::move(spec));
  ParamStore<T> params;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    if (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose) {
      const Shape ws = l.kind == LayerKind::conv
                           ? Shape{l.out_channels, l.in_channels, l.kernel, l.kernel}
                           : Shape{l.in_channels, l.out_channels, l.kernel, l.kernel};
      const double fan_in = static_cast<double>(l.kernel) * l.kernel * l.in_channels;
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      Tensor<T> w(ws);
      for (auto& v : w.values()) v = static_cast<T>(dist(rng));
      params.set({i, ParamRole::weight}, std::move(w));
      if (l.bias) {
        params.set({i, ParamRole::bias}, Tensor<T>(vector_shape(l.out_channels)));
      }
    } else if (l.kind == LayerKind::instance_norm) {
      params.set({i, ParamRole::gamma},
                 Tensor<T>(vector_shape(l.in_channels), T{1}));
      params.set({i, ParamRole::beta}, Tensor<T>(vector_shape(l.in_channels)));
    }
  }
  return {std::move(net), std::move(params)};
}

// ---------------------------------------------------------------------------
// Execution

/// Activations retained by a recording forward pass.
template <typename T>
struct Tape {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;
  bool recorded = false;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  Tape<T> tape;
};

template <typename T>
struct BackwardResult {
  ParamStore<T> grads;
  Tensor<T> grad_input;
};

namespace detail {

template <typename T>
std::span<const T> bias_of(const ParamStore<T>& p, int i, const LayerSpec& l) {
  if (!l.bias) return {};
  return p.at({i, ParamRole::bias}).values();
}

template <typename T>
ConvOptions transpose_options(const Network& net, int i, const Shape& in,
                              const Shape& out) {
  const LayerSpec& l = net.layer(i);
  const int base_h = conv_transpose_output_size(in.h, l.kernel, l.stride, l.pad);
  const int base_w = conv_transpose_output_size(in.w, l.kernel, l.stride, l.pad);
  return ConvOptions{l.stride, l.pad, out.h - base_h, out.w - base_w};
}

}  // namespace detail

/// Runs the network. With record_tape the returned tape holds every layer
/// output so that backward() can be called.
template <typename T>
ForwardResult<T> forward(const Network& net, const ParamStore<T>& params,
                         const Tensor<T>& input, bool record_tape = false) {
  const auto shapes = net.infer_shapes(input.shape());
  std::vector<Tensor<T>> outs(net.size());
  auto out_of = [&](int i) -> const Tensor<T>& {
    return i == kNetworkInput ? input : outs[i];
  };
  for (int i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    const Tensor<T>& x = out_of(i - 1);
    switch (l.kind) {
      case LayerKind::conv:
        outs[i] = conv2d(x, params.at({i, ParamRole::weight}),
                         detail::bias_of(params, i, l),
                         ConvOptions{l.stride, l.pad});
        break;
      case LayerKind::conv_transpose:
        outs[i] = conv_transpose2d(
            x, params.at({i, ParamRole::weight}), detail::bias_of(params, i, l),
            detail::transpose_options<T>(net, i, x.shape(), shapes[i]));
        break;
      case LayerKind::instance_norm:
        outs[i] = instance_norm(x, params.at({i, ParamRole::gamma}).values(),
                                params.at({i, ParamRole::beta}).values());
        break;
      case LayerKind::activation:
        outs[i] = activate(x, l.activation, static_cast<T>(l.slope));
        break;
      case LayerKind::box_filter:
        outs[i] = box_filter3(x);
        break;
      case LayerKind::resize:
        outs[i] = resize(x, shapes[i].h, shapes[i].w, l.resize_mode);
        break;
      case LayerKind::add_skip:
        outs[i] = elementwise_add(x, out_of(l.from));
        break;
      case LayerKind::concat_skip:
        outs[i] = concat_channels(x, out_of(l.from));
        break;
      case LayerKind::global_avg_pool:
        outs[i] = global_avg_pool(x);
        break;
    }
  }
  ForwardResult<T> result;
  result.output = net.size() == 0 ? input : outs.back();
  if (record_tape) {
    result.tape.input = input;
    result.tape.outputs = std::move(outs);
    result.tape.recorded = true;
  }
  return result;
}

/// Gradients of every parameter and of the input, given dLoss/dOutput.
template <typename T>
BackwardResult<T> backward(const Network& net, const ParamStore<T>& params,
                           const Tape<T>& tape, const Tensor<T>& grad_out) {
  if (!tape.recorded) {
    throw std::logic_error(net.name() +
                           ": backward requires a tape from forward(record_tape)");
  }
  if (static_cast<int>(tape.outputs.size()) != net.size()) {
    throw std::logic_error(net.name() + ": tape does not match network");
  }
  const Tensor<T>& final_out = net.size() == 0 ? tape.input : tape.outputs.back();
  require_same_shape(grad_out, final_out, "backward grad_out");

  BackwardResult<T> result{params.zeros_like(), Tensor<T>()};
  std::vector<Tensor<T>> grads(net.size());
  auto out_of = [&](int i) -> const Tensor<T>& {
    return i == kNetworkInput ? tape.input : tape.outputs[i];
  };
  auto accumulate = [&](int i, Tensor<T> g) {
    Tensor<T>& slot = i == kNetworkInput ? result.grad_input : grads[i];
    if (slot.empty()) {
      slot = std::move(g);
    } else {
      add_inplace(slot, g);
    }
  };
  auto add_vec = [](Tensor<T>& dst, const std::vector<T>& src) {
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  };

  if (net.size() == 0) {
    result.grad_input = grad_out;
    return result;
  }
  grads.back() = grad_out;
  for (int i = net.size() - 1; i >= 0; --i) {
    if (grads[i].empty()) continue;
    const Tensor<T> g = std::move(grads[i]);
    const LayerSpec& l = net.layer(i);
    const Tensor<T>& x = out_of(i - 1);
    switch (l.kind) {
      case LayerKind::conv: {
        auto cg = conv2d_backward(x, params.at({i, ParamRole::weight}),
                                  detail::bias_of(params, i, l),
                                  ConvOptions{l.stride, l.pad}, g);
        add_inplace(result.grads.at({i, ParamRole::weight}), cg.weight);
        if (l.bias) add_vec(result.grads.at({i, ParamRole::bias}), cg.bias);
        accumulate(i - 1, std::move(cg.input));
        break;
      }
      case LayerKind::conv_transpose: {
        auto cg = conv_transpose2d_backward(
            x, params.at({i, ParamRole::weight}), detail::bias_of(params, i, l),
            detail::transpose_options<T>(net, i, x.shape(), g.shape()), g);
        add_inplace(result.grads.at({i, ParamRole::weight}), cg.weight);
        if (l.bias) add_vec(result.grads.at({i, ParamRole::bias}), cg.bias);
        accumulate(i - 1, std::move(cg.input));
        break;
      }
      case LayerKind::instance_norm: {
        auto ng = instance_norm_backward(
            x, params.at({i, ParamRole::gamma}).values(),
            params.at({i, ParamRole::beta}).values(), g);
        add_vec(result.grads.at({i, ParamRole::gamma}), ng.gamma);
        add_vec(result.grads.at({i, ParamRole::beta}), ng.beta);
        accumulate(i - 1, std::move(ng.input));
        break;
      }
      case LayerKind::activation:
        accumulate(i - 1, activate_backward(x, out_of(i), g, l.activation,
                                            static_cast<T>(l.slope)));
        break;
      case LayerKind::box_filter:
        accumulate(i - 1, box_filter3_backward(g));
        break;
      case LayerKind::resize:
        accumulate(i - 1, resize_backward(x.shape(), g, l.resize_mode));
        break;
      case LayerKind::add_skip:
        accumulate(l.from, g);
        accumulate(i - 1, g);
        break;
      case LayerKind::concat_skip: {
        auto [ga, gb] = concat_channels_backward(g, x.c());
        accumulate(l.from, std::move(gb));
        accumulate(i - 1, std::move(ga));
        break;
      }
      case LayerKind::global_avg_pool:
        accumulate(i - 1, global_avg_pool_backward(x.shape(), g));
        break;
    }
  }
  if (result.grad_input.empty()) result.grad_input = Tensor<T>(tape.input.shape());
  return result;
}

}  // namespace mope

#endif  // MOPE_NETWORK_HPP_

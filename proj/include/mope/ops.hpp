#ifndef MOPE_OPS_HPP_
#define MOPE_OPS_HPP_

// Differentiable operators over Tensor<T>. Every forward op is a pure function
// of its arguments; each has an explicit backward that returns fresh gradient
// tensors. Convolutions follow the cross-correlation convention (no flip).

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mope/detail/gemm.hpp"
#include "mope/tensor.hpp"

namespace mope {

struct ConvOptions {
  int stride = 1;
  int pad = 0;
  // Transposed convolution only: extra rows/cols appended to the output so
  // that a stride-2 layer can restore an even size. Must be < stride.
  int output_padding = 0;
  // Width padding when it differs from the height padding; -1 means same.
  int output_padding_w = -1;

  int padding_w() const {
    return output_padding_w < 0 ? output_padding : output_padding_w;
  }
};

/// Weight (c_out, c_in, k, k) plus optional bias of length c_out.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  std::vector<T> bias;
  int stride = 1;
  int pad = 0;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;
};

inline int conv_output_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int conv_transpose_output_size(int in, int k, int stride, int pad,
                                      int output_padding = 0) {
  return (in - 1) * stride - 2 * pad + k + output_padding;
}

namespace detail {

// Geometry of a forward convolution from (c_in, h_in, w_in) to
// (c_out, h_out, w_out). Transposed convolutions reuse it with the roles of
// input and output swapped.
struct ConvGeometry {
  int c_in, c_out, k, stride, pad, h_in, w_in, h_out, w_out;

  int patch() const { return c_in * k * k; }
  int out_plane() const { return h_out * w_out; }
  int in_plane() const { return h_in * w_in; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int hw = g.out_plane();
  for (int c = 0; c < g.c_in; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.in_plane();
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw;
        for (int oh = 0; oh < g.h_out; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          T* dst = row + oh * g.w_out;
          if (ih < 0 || ih >= g.h_in) {
            std::fill(dst, dst + g.w_out, T{0});
            continue;
          }
          const T* src = xc + ih * g.w_in;
          for (int ow = 0; ow < g.w_out; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < g.w_in) ? src[iw] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into x.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const int hw = g.out_plane();
  for (int c = 0; c < g.c_in; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.in_plane();
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row =
            cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw;
        for (int oh = 0; oh < g.h_out; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h_in) continue;
          const T* src = row + oh * g.w_out;
          T* dst = xc + ih * g.w_in;
          for (int ow = 0; ow < g.w_out; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w_in) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.k == 1 && g.stride == 1 && g.pad == 0;
}

inline void check_conv_options(const ConvOptions& opt, int k, const char* op) {
  if (opt.stride < 1) {
    throw ShapeError(std::string(op) + ": stride must be >= 1, got " +
                     std::to_string(opt.stride));
  }
  if (opt.pad < 0) {
    throw ShapeError(std::string(op) + ": pad must be >= 0");
  }
  if (k % 2 == 0) {
    throw ShapeError(std::string(op) + ": kernel size must be odd, got " +
                     std::to_string(k));
  }
}

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const Tensor<T>& weight,
                           std::span<const T> bias, const ConvOptions& opt) {
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square");
  check_conv_options(opt, ws.h, "conv2d");
  if (in.c != ws.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(in.c) +
                     " != weight c_in " + std::to_string(ws.c));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != ws.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) +
                     " != c_out " + std::to_string(ws.n));
  }
  ConvGeometry g{in.c, ws.n, ws.h, opt.stride, opt.pad, in.h, in.w, 0, 0};
  g.h_out = conv_output_size(in.h, g.k, g.stride, g.pad);
  g.w_out = conv_output_size(in.w, g.k, g.stride, g.pad);
  if (in.h + 2 * g.pad < g.k || g.h_out < 1) {
    throw ShapeError("conv2d: height " + std::to_string(in.h) +
                     " too small for kernel " + std::to_string(g.k));
  }
  if (in.w + 2 * g.pad < g.k || g.w_out < 1) {
    throw ShapeError("conv2d: width " + std::to_string(in.w) +
                     " too small for kernel " + std::to_string(g.k));
  }
  return g;
}

// Weight of a transposed convolution is (c_in, c_out, k, k): the weight of
// the forward convolution whose data-gradient it computes.
template <typename T>
ConvGeometry conv_transpose_geometry(const Shape& in, const Tensor<T>& weight,
                                     std::span<const T> bias,
                                     const ConvOptions& opt) {
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv_transpose2d: kernel must be square");
  check_conv_options(opt, ws.h, "conv_transpose2d");
  if (opt.output_padding < 0 || opt.output_padding >= opt.stride ||
      opt.padding_w() >= opt.stride) {
    throw ShapeError("conv_transpose2d: output_padding must be in [0, stride)");
  }
  if (in.c != ws.n) {
    throw ShapeError("conv_transpose2d: input channels " +
                     std::to_string(in.c) + " != weight c_in " +
                     std::to_string(ws.n));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != ws.c) {
    throw ShapeError("conv_transpose2d: bias length " +
                     std::to_string(bias.size()) + " != c_out " +
                     std::to_string(ws.c));
  }
  const int ho = conv_transpose_output_size(in.h, ws.h, opt.stride, opt.pad,
                                            opt.output_padding);
  const int wo = conv_transpose_output_size(in.w, ws.h, opt.stride, opt.pad,
                                            opt.padding_w());
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv_transpose2d: output size would be empty");
  }
  return ConvGeometry{ws.c, ws.n, ws.h, opt.stride, opt.pad, ho, wo, in.h, in.w};
}

template <typename T>
T plane_sum(const T* p, std::size_t count) {
  T s{0};
  for (std::size_t i = 0; i < count; ++i) s += p[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 std::span<const T> bias, ConvOptions opt) {
  const auto g = detail::conv_geometry(input.shape(), weight, bias, opt);
  Tensor<T> out(Shape{input.n(), g.c_out, g.h_out, g.w_out});
  const int K = g.patch();
  const int hw = g.out_plane();
  std::vector<T> cols;
  if (!detail::is_pointwise(g)) cols.resize(static_cast<std::size_t>(K) * hw);
  for (int n = 0; n < input.n(); ++n) {
    T* y = out.sample(n);
    if (!bias.empty()) {
      for (int c = 0; c < g.c_out; ++c) {
        std::fill(y + static_cast<std::size_t>(c) * hw,
                  y + static_cast<std::size_t>(c + 1) * hw, bias[c]);
      }
    }
    const T* src = input.sample(n);
    if (!cols.empty()) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    detail::gemm_nn(g.c_out, hw, K, weight.data(), K, src, hw, y, hw);
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  return conv2d(input, p.weight, std::span<const T>(p.bias),
                ConvOptions{p.stride, p.pad});
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                             std::span<const T> bias, ConvOptions opt,
                             const Tensor<T>& grad_out) {
  const auto g = detail::conv_geometry(input.shape(), weight, bias, opt);
  const Shape expect{input.n(), g.c_out, g.h_out, g.w_out};
  if (grad_out.shape() != expect) {
    throw ShapeError("conv2d_backward: grad_out shape " +
                     grad_out.shape().str() + " != output shape " +
                     expect.str());
  }
  const int K = g.patch();
  const int hw = g.out_plane();
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()),
                     std::vector<T>(bias.empty() ? 0 : g.c_out, T{0})};
  const auto w_t = detail::transpose(weight.data(), g.c_out, K);
  const bool pointwise = detail::is_pointwise(g);
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K) * hw);
  std::vector<T> grad_cols(static_cast<std::size_t>(K) * hw);
  for (int n = 0; n < input.n(); ++n) {
    const T* go = grad_out.sample(n);
    for (std::size_t c = 0; c < grads.bias.size(); ++c) {
      grads.bias[c] += detail::plane_sum(go + c * hw, hw);
    }
    const T* src = input.sample(n);
    if (!pointwise) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    const auto src_t = detail::transpose(src, K, hw);
    detail::gemm_nn(g.c_out, K, hw, go, hw, src_t.data(), K,
                    grads.weight.data(), K);
    if (pointwise) {
      detail::gemm_nn(K, hw, g.c_out, w_t.data(), g.c_out, go, hw,
                      grads.input.sample(n), hw);
    } else {
      std::fill(grad_cols.begin(), grad_cols.end(), T{0});
      detail::gemm_nn(K, hw, g.c_out, w_t.data(), g.c_out, go, hw,
                      grad_cols.data(), hw);
      detail::col2im(grad_cols.data(), g, grads.input.sample(n));
    }
  }
  return grads;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p,
                             const Tensor<T>& grad_out) {
  return conv2d_backward(input, p.weight, std::span<const T>(p.bias),
                         ConvOptions{p.stride, p.pad}, grad_out);
}

/// Transposed convolution. weight is (c_in, c_out, k, k); output size is
/// (h_in - 1) * stride - 2 * pad + k + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           std::span<const T> bias, ConvOptions opt) {
  const auto g =
      detail::conv_transpose_geometry(input.shape(), weight, bias, opt);
  Tensor<T> out(Shape{input.n(), g.c_in, g.h_in, g.w_in});
  const int K = g.patch();
  const int hw = g.out_plane();
  const auto w_t = detail::transpose(weight.data(), g.c_out, K);
  std::vector<T> cols(static_cast<std::size_t>(K) * hw);
  for (int n = 0; n < input.n(); ++n) {
    std::fill(cols.begin(), cols.end(), T{0});
    detail::gemm_nn(K, hw, g.c_out, w_t.data(), g.c_out, input.sample(n), hw,
                    cols.data(), hw);
    T* y = out.sample(n);
    detail::col2im(cols.data(), g, y);
    if (!bias.empty()) {
      const std::size_t plane = out.shape().plane();
      for (int c = 0; c < g.c_in; ++c) {
        for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] += bias[c];
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& input,
                                       const Tensor<T>& weight,
                                       std::span<const T> bias,
                                       ConvOptions opt,
                                       const Tensor<T>& grad_out) {
  const auto g =
      detail::conv_transpose_geometry(input.shape(), weight, bias, opt);
  const Shape expect{input.n(), g.c_in, g.h_in, g.w_in};
  if (grad_out.shape() != expect) {
    throw ShapeError("conv_transpose2d_backward: grad_out shape " +
                     grad_out.shape().str() + " != output shape " +
                     expect.str());
  }
  const int K = g.patch();
  const int hw = g.out_plane();
  const std::size_t out_plane = expect.plane();
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()),
                     std::vector<T>(bias.empty() ? 0 : g.c_in, T{0})};
  std::vector<T> cols(static_cast<std::size_t>(K) * hw);
  for (int n = 0; n < input.n(); ++n) {
    const T* go = grad_out.sample(n);
    for (std::size_t c = 0; c < grads.bias.size(); ++c) {
      grads.bias[c] += detail::plane_sum(go + c * out_plane, out_plane);
    }
    detail::im2col(go, g, cols.data());
    detail::gemm_nn(g.c_out, hw, K, weight.data(), K, cols.data(), hw,
                    grads.input.sample(n), hw);
    const auto cols_t = detail::transpose(cols.data(), K, hw);
    detail::gemm_nn(g.c_out, K, hw, input.sample(n), hw, cols_t.data(), K,
                    grads.weight.data(), K);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Instance normalization

inline constexpr double kInstanceNormEps = 1e-5;

template <typename T>
struct InstanceNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

namespace detail {

template <typename T>
void check_affine(const Tensor<T>& input, std::span<const T> gamma,
                  std::span<const T> beta) {
  if (static_cast<int>(gamma.size()) != input.c() ||
      static_cast<int>(beta.size()) != input.c()) {
    throw ShapeError("instance_norm: gamma/beta length must equal channels " +
                     std::to_string(input.c()));
  }
}

// Mean and 1/sqrt(var + eps) of one plane, accumulated in double.
template <typename T>
std::pair<double, double> plane_stats(const T* p, std::size_t count,
                                      double eps) {
  double mean = 0.0;
  for (std::size_t i = 0; i < count; ++i) mean += p[i];
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = p[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(count);
  return {mean, 1.0 / std::sqrt(var + eps)};
}

}  // namespace detail

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, std::span<const T> gamma,
                        std::span<const T> beta,
                        double eps = kInstanceNormEps) {
  detail::check_affine(input, gamma, beta);
  Tensor<T> out(input.shape());
  const std::size_t plane = input.shape().plane();
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      const auto [mean, inv_std] = detail::plane_stats(x, plane, eps);
      for (std::size_t i = 0; i < plane; ++i) {
        y[i] = static_cast<T>(gamma[c] * ((x[i] - mean) * inv_std) + beta[c]);
      }
    }
  }
  return out;
}

template <typename T>
InstanceNormGrads<T> instance_norm_backward(const Tensor<T>& input,
                                            std::span<const T> gamma,
                                            std::span<const T> beta,
                                            const Tensor<T>& grad_out,
                                            double eps = kInstanceNormEps) {
  detail::check_affine(input, gamma, beta);
  require_same_shape(input, grad_out, "instance_norm_backward");
  InstanceNormGrads<T> grads{Tensor<T>(input.shape()),
                             std::vector<T>(input.c(), T{0}),
                             std::vector<T>(input.c(), T{0})};
  const std::size_t plane = input.shape().plane();
  const double count = static_cast<double>(plane);
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const T* x = input.plane(n, c);
      const T* dy = grad_out.plane(n, c);
      T* dx = grads.input.plane(n, c);
      const auto [mean, inv_std] = detail::plane_stats(x, plane, eps);
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xhat;
      }
      grads.gamma[c] += static_cast<T>(sum_dy_xhat);
      grads.beta[c] += static_cast<T>(sum_dy);
      const double g = gamma[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        dx[i] = static_cast<T>(g * inv_std / count *
                               (count * dy[i] - sum_dy - xhat * sum_dy_xhat));
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// 3x3 mean filter, reflect padding (-1 -> 1, h -> h - 2).

namespace detail {

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace detail

template <typename T>
Tensor<T> box_filter3(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const int H = input.h();
  const int W = input.w();
  const T ninth = T{1} / T{9};
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          T s{0};
          for (int di = -1; di <= 1; ++di) {
            const T* row = x + detail::reflect_index(i + di, H) * W;
            for (int dj = -1; dj <= 1; ++dj) {
              s += row[detail::reflect_index(j + dj, W)];
            }
          }
          y[i * W + j] = s * ninth;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> box_filter3_backward(const Tensor<T>& grad_out) {
  Tensor<T> grad(grad_out.shape());
  const int H = grad_out.h();
  const int W = grad_out.w();
  const T ninth = T{1} / T{9};
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const T* gy = grad_out.plane(n, c);
      T* gx = grad.plane(n, c);
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const T v = gy[i * W + j] * ninth;
          for (int di = -1; di <= 1; ++di) {
            T* row = gx + detail::reflect_index(i + di, H) * W;
            for (int dj = -1; dj <= 1; ++dj) {
              row[detail::reflect_index(j + dj, W)] += v;
            }
          }
        }
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Resize

enum class ResizeMode { nearest, bilinear };

namespace detail {

// Per-axis sampling table: output index -> (i0, i1, weight of i1).
struct AxisTaps {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

inline AxisTaps axis_taps(int in, int out, ResizeMode mode) {
  AxisTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.assign(out, 0.0);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    if (mode == ResizeMode::nearest) {
      const int src = static_cast<int>((static_cast<long>(o) * in) / out);
      t.i0[o] = t.i1[o] = src;
      continue;
    }
    // Pixel-center (align-corners off) sampling.
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.frac[o] = hi == lo ? 0.0 : src - lo;
  }
  return t;
}

}  // namespace detail

template <typename T>
Tensor<T> resize(const Tensor<T>& input, int out_h, int out_w,
                 ResizeMode mode) {
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("resize: output size must be >= 1");
  }
  if (input.h() < 1 || input.w() < 1) {
    throw ShapeError("resize: input size must be >= 1");
  }
  const auto ty = detail::axis_taps(input.h(), out_h, mode);
  const auto tx = detail::axis_taps(input.w(), out_w, mode);
  Tensor<T> out(Shape{input.n(), input.c(), out_h, out_w});
  const int W = input.w();
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        const double fy = ty.frac[i];
        const T* r0 = x + ty.i0[i] * W;
        const T* r1 = x + ty.i1[i] * W;
        for (int j = 0; j < out_w; ++j) {
          const double fx = tx.frac[j];
          const double top = r0[tx.i0[j]] * (1.0 - fx) + r0[tx.i1[j]] * fx;
          const double bot = r1[tx.i0[j]] * (1.0 - fx) + r1[tx.i1[j]] * fx;
          y[i * out_w + j] = static_cast<T>(top * (1.0 - fy) + bot * fy);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> resize_backward(const Shape& input_shape, const Tensor<T>& grad_out,
                          ResizeMode mode) {
  const int out_h = grad_out.h();
  const int out_w = grad_out.w();
  const auto ty = detail::axis_taps(input_shape.h, out_h, mode);
  const auto tx = detail::axis_taps(input_shape.w, out_w, mode);
  Tensor<T> grad(input_shape);
  const int W = input_shape.w;
  for (int n = 0; n < grad.n(); ++n) {
    for (int c = 0; c < grad.c(); ++c) {
      const T* gy = grad_out.plane(n, c);
      T* gx = grad.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        const double fy = ty.frac[i];
        for (int j = 0; j < out_w; ++j) {
          const double fx = tx.frac[j];
          const double g = gy[i * out_w + j];
          gx[ty.i0[i] * W + tx.i0[j]] += static_cast<T>(g * (1 - fy) * (1 - fx));
          gx[ty.i0[i] * W + tx.i1[j]] += static_cast<T>(g * (1 - fy) * fx);
          gx[ty.i1[i] * W + tx.i0[j]] += static_cast<T>(g * fy * (1 - fx));
          gx[ty.i1[i] * W + tx.i1[j]] += static_cast<T>(g * fy * fx);
        }
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, leaky_relu, sigmoid, tanh };

template <typename T>
T activate_scalar(T x, Activation kind, T slope) {
  switch (kind) {
    case Activation::relu:
      return x > T{0} ? x : T{0};
    case Activation::leaky_relu:
      return x > T{0} ? x : slope * x;
    case Activation::sigmoid:
      return T{1} / (T{1} + std::exp(-x));
    case Activation::tanh:
      return std::tanh(x);
  }
  return x;
}

template <typename T>
Tensor<T> activate(const Tensor<T>& input, Activation kind, T slope = T{0}) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) {
    y[i] = activate_scalar(x[i], kind, slope);
  }
  return out;
}

/// Gradient through an activation given its input and output.
template <typename T>
Tensor<T> activate_backward(const Tensor<T>& input, const Tensor<T>& output,
                            const Tensor<T>& grad_out, Activation kind,
                            T slope = T{0}) {
  require_same_shape(input, grad_out, "activate_backward");
  require_same_shape(output, grad_out, "activate_backward");
  Tensor<T> grad(input.shape());
  const T* x = input.data();
  const T* y = output.data();
  const T* g = grad_out.data();
  T* d = grad.data();
  for (std::size_t i = 0; i < input.size(); ++i) {
    switch (kind) {
      case Activation::relu:
        d[i] = x[i] > T{0} ? g[i] : T{0};
        break;
      case Activation::leaky_relu:
        d[i] = x[i] > T{0} ? g[i] : slope * g[i];
        break;
      case Activation::sigmoid:
        d[i] = g[i] * y[i] * (T{1} - y[i]);
        break;
      case Activation::tanh:
        d[i] = g[i] * (T{1} - y[i] * y[i]);
        break;
    }
  }
  return grad;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activate(x, Activation::relu);
}
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return activate(x, Activation::leaky_relu, slope);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activate(x, Activation::sigmoid);
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return activate(x, Activation::tanh);
}

// ---------------------------------------------------------------------------
// Skip-link arithmetic and pooling

template <typename T>
Tensor<T> elementwise_add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise_add");
  Tensor<T> out = a;
  add_inplace(out, b);
  return out;
}

/// Both operands receive grad_out unchanged.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> elementwise_add_backward(
    const Tensor<T>& grad_out) {
  return {grad_out, grad_out};
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels: " + a.shape().str() + " and " +
                     b.shape().str() + " differ outside the channel axis");
  }
  Tensor<T> out(Shape{a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t sa = static_cast<std::size_t>(a.c()) * a.shape().plane();
  const std::size_t sb = static_cast<std::size_t>(b.c()) * b.shape().plane();
  for (int n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n), a.sample(n) + sa, out.sample(n));
    std::copy(b.sample(n), b.sample(n) + sb, out.sample(n) + sa);
  }
  return out;
}

/// Splits grad_out back into the first `channels_a` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_channels_backward(
    const Tensor<T>& grad_out, int channels_a) {
  if (channels_a < 0 || channels_a > grad_out.c()) {
    throw ShapeError("concat_channels_backward: split point out of range");
  }
  const Shape& s = grad_out.shape();
  Tensor<T> ga(Shape{s.n, channels_a, s.h, s.w});
  Tensor<T> gb(Shape{s.n, s.c - channels_a, s.h, s.w});
  const std::size_t sa = ga.size() / std::max(1, s.n);
  const std::size_t sb = gb.size() / std::max(1, s.n);
  for (int n = 0; n < s.n; ++n) {
    std::copy(grad_out.sample(n), grad_out.sample(n) + sa, ga.sample(n));
    std::copy(grad_out.sample(n) + sa, grad_out.sample(n) + sa + sb,
              gb.sample(n));
  }
  return {std::move(ga), std::move(gb)};
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  Tensor<T> out(Shape{input.n(), input.c(), 1, 1});
  const std::size_t plane = input.shape().plane();
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      double s = 0.0;
      const T* x = input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) s += x[i];
      out(n, c, 0, 0) = static_cast<T>(s / static_cast<double>(plane));
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape,
                                   const Tensor<T>& grad_out) {
  Tensor<T> grad(input_shape);
  const std::size_t plane = input_shape.plane();
  const T inv = T{1} / static_cast<T>(plane);
  for (int n = 0; n < input_shape.n; ++n) {
    for (int c = 0; c < input_shape.c; ++c) {
      const T g = grad_out(n, c, 0, 0) * inv;
      T* d = grad.plane(n, c);
      std::fill(d, d + plane, g);
    }
  }
  return grad;
}

}  // namespace mope

#endif  // MOPE_OPS_HPP_

#ifndef MOPE_TENSOR_HPP_
#define MOPE_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mope {

/// Raised by any operator whose operands disagree in shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (batch, channel, height, width) extents of a dense 4-D tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
  }
};

/// Dense row-major (n, c, h, w) array. Plain value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape) {
    check_extents(shape);
    data_.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(shape), data_(std::move(values)) {
    check_extents(shape);
    if (data_.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  // Views must not outlive the tensor: no views of temporaries.
  std::span<T> values() & { return data_; }
  std::span<const T> values() const& { return data_; }
  std::span<const T> values() && = delete;
  const std::vector<T>& vector() const& { return data_; }
  const std::vector<T>& vector() && = delete;

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + ih) *
               shape_.w +
           iw;
  }
  T& operator()(int in, int ic, int ih, int iw) {
    return data_[offset(in, ic, ih, iw)];
  }
  const T& operator()(int in, int ic, int ih, int iw) const {
    return data_[offset(in, ic, ih, iw)];
  }

  // Start of the (sample, channel) plane.
  T* plane(int in, int ic) { return data_.data() + offset(in, ic, 0, 0); }
  const T* plane(int in, int ic) const {
    return data_.data() + offset(in, ic, 0, 0);
  }
  // Start of one sample (all channels).
  T* sample(int in) { return data_.data() + offset(in, 0, 0, 0); }
  const T* sample(int in) const { return data_.data() + offset(in, 0, 0, 0); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  /// Bit-exact comparison of shape and payload.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(),
                        a.data_.size() * sizeof(T)) == 0);
  }

 private:
  static void check_extents(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("negative extent in shape " + s.str());
    }
  }

  Shape shape_{};
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + a.shape().str() +
                     " does not match " + b.shape().str());
  }
}

/// Concatenates single- or multi-sample tensors along the batch axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) return {};
  Shape s = items.front().shape();
  int total = 0;
  for (const auto& t : items) {
    if (t.c() != s.c || t.h() != s.h || t.w() != s.w) {
      throw ShapeError("stack: item shape " + t.shape().str() +
                       " does not match " + s.str());
    }
    total += t.n();
  }
  s.n = total;
  Tensor<T> out(s);
  T* dst = out.data();
  for (const auto& t : items) {
    std::copy(t.data(), t.data() + t.size(), dst);
    dst += t.size();
  }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  return stack(std::span<const Tensor<T>>(items));
}

/// Samples [begin, begin + count) along the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.n()) {
    throw ShapeError("slice_batch: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside batch of " +
                     std::to_string(t.n()));
  }
  Shape s = t.shape();
  s.n = count;
  Tensor<T> out(s);
  std::copy(t.sample(begin), t.sample(begin) + out.size(), out.data());
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  require_same_shape(acc, x, "add_inplace");
  T* a = acc.data();
  const T* b = x.data();
  for (std::size_t i = 0; i < acc.size(); ++i) a[i] += b[i];
}

template <typename T>
void scale_inplace(Tensor<T>& t, T factor) {
  for (auto& v : t.values()) v *= factor;
}

template <typename T>
Tensor<T> clip(Tensor<T> t, T lo, T hi) {
  for (auto& v : t.values()) v = std::clamp(v, lo, hi);
  return t;
}

}  // namespace mope

#endif  // MOPE_TENSOR_HPP_

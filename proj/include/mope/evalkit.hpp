#ifndef MOPE_EVALKIT_HPP_
#define MOPE_EVALKIT_HPP_

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mope/tensor.hpp"

namespace mope {

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / mse); +infinity when the inputs are identical.
inline double psnr_from_mse(double m, double peak = 1.0) {
  if (m <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  return psnr_from_mse(mse(a, b), peak);
}

/// Index of the largest logit; ties go to the lowest index.
template <typename T>
int argmax_class(const Tensor<T>& logits, int sample) {
  const T* z = logits.sample(sample);
  int best = 0;
  for (int j = 1; j < logits.c(); ++j) {
    if (z[j] > z[best]) best = j;
  }
  return best;
}

template <typename T>
double classification_accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != logits.n()) {
    throw ShapeError("classification_accuracy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.n()) + " samples");
  }
  if (labels.empty()) return 0.0;
  int hits = 0;
  for (int n = 0; n < logits.n(); ++n) hits += argmax_class(logits, n) == labels[n];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Multiple object tracking accuracy

struct TrackingCounts {
  std::vector<long> fn, fp, id, g;  // one entry per frame
};

/// 1 - sum(fn + fp + id) / sum(g). Unbounded below.
inline double mota(const TrackingCounts& t) {
  const std::size_t frames = t.g.size();
  if (t.fn.size() != frames || t.fp.size() != frames || t.id.size() != frames) {
    throw std::invalid_argument("mota: per-frame count lists differ in length");
  }
  long errors = 0;
  long truth = 0;
  for (std::size_t i = 0; i < frames; ++i) {
    if (t.fn[i] < 0 || t.fp[i] < 0 || t.id[i] < 0 || t.g[i] < 0) {
      throw std::invalid_argument("mota: negative count in frame " + std::to_string(i));
    }
    errors += t.fn[i] + t.fp[i] + t.id[i];
    truth += t.g[i];
  }
  if (truth == 0) throw std::invalid_argument("mota: no ground-truth objects");
  return 1.0 - static_cast<double>(errors) / static_cast<double>(truth);
}

/// Reads "frame,fn,fp,id,g" CSV (header required).
inline TrackingCounts read_tracking_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("tracking CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "frame,fn,fp,id,g") {
    throw std::runtime_error("tracking CSV: expected header 'frame,fn,fp,id,g'");
  }
  TrackingCounts t;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<long> v;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stol(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("tracking CSV line " + std::to_string(row_no) +
                                 ": bad number '" + cell + "'");
      }
    }
    if (v.size() != 5) {
      throw std::runtime_error("tracking CSV line " + std::to_string(row_no) +
                               ": expected 5 fields");
    }
    t.fn.push_back(v[1]);
    t.fp.push_back(v[2]);
    t.id.push_back(v[3]);
    t.g.push_back(v[4]);
  }
  return t;
}

inline TrackingCounts read_tracking_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_tracking_csv(in);
}

// ---------------------------------------------------------------------------
// Gate confusion

struct GateReport {
  double accuracy = 0.0;
  int clean_as_clean = 0;
  int clean_as_noisy = 0;
  int noisy_as_clean = 0;
  int noisy_as_noisy = 0;

  int total() const { return clean_as_clean + clean_as_noisy + noisy_as_clean + noisy_as_noisy; }
};

/// `routed_noisy[i]` is whether the gate sent image i to the noisy expert;
/// `is_noisy[i]` is the ground truth.
inline GateReport gate_report(const std::vector<bool>& routed_noisy,
                              const std::vector<bool>& is_noisy) {
  if (routed_noisy.size() != is_noisy.size()) {
    throw std::invalid_argument("gate_report: decision/label counts differ");
  }
  GateReport r;
  for (std::size_t i = 0; i < is_noisy.size(); ++i) {
    if (is_noisy[i]) {
      (routed_noisy[i] ? r.noisy_as_noisy : r.noisy_as_clean)++;
    } else {
      (routed_noisy[i] ? r.clean_as_noisy : r.clean_as_clean)++;
    }
  }
  if (r.total() > 0) {
    r.accuracy = static_cast<double>(r.clean_as_clean + r.noisy_as_noisy) / r.total();
  }
  return r;
}

}  // namespace mope

#endif  // MOPE_EVALKIT_HPP_

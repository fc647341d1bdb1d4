#ifndef MOPE_SYNTH_HPP_
#define MOPE_SYNTH_HPP_

// Procedural labeled images: one geometric shape or texture per class,
// drawn at a random position, scale, rotation and color pair.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mope/tensor.hpp"

namespace mope {

/// Failure reading or writing images and manifests.
class DataIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  int num_classes = 10;
  int image_size = 64;
  int samples_per_class = 100;
  std::uint64_t seed = 0;
};

enum class Split : std::uint8_t { train, heldout };

struct Dataset {
  int image_size = 0;
  int num_classes = 0;
  std::vector<Tensor<float>> images;  // each (1, 3, size, size), values in [0, 1]
  std::vector<int> labels;
  std::vector<Split> split;

  std::size_t size() const { return images.size(); }
};

/// Images and labels of one split, in id order.
struct LabeledImages {
  std::vector<Tensor<float>> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

inline LabeledImages select_split(const Dataset& d, Split which) {
  LabeledImages out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.split[i] != which) continue;
    out.images.push_back(d.images[i]);
    out.labels.push_back(d.labels[i]);
  }
  return out;
}

inline const char* split_name(Split s) { return s == Split::train ? "train" : "heldout"; }

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double fract(double x) { return x - std::floor(x); }

// Inside test in shape-local coordinates; the shape fits the unit disk.
inline bool shape_contains(int cls, double u, double v) {
  constexpr double pi = std::numbers::pi;
  const double r = std::hypot(u, v);
  const double box = std::max(std::abs(u), std::abs(v));
  switch (cls % 10) {
    case 0:  // disk
      return r <= 0.9;
    case 1:  // square
      return box <= 0.68;
    case 2: {  // equilateral triangle, circumradius 0.95
      for (int k = 0; k < 3; ++k) {
        const double a = pi / 2 + 2 * pi * k / 3;
        if (u * std::cos(a) + v * std::sin(a) < -0.475) return false;
      }
      return true;
    }
    case 3:  // ring
      return r >= 0.5 && r <= 0.9;
    case 4:  // plus
      return (std::abs(u) <= 0.25 && std::abs(v) <= 0.9) ||
             (std::abs(v) <= 0.25 && std::abs(u) <= 0.9);
    case 5: {  // five-point star
      const double th = std::atan2(v, u);
      const double t = fract(th / (2 * pi / 5) + 0.25);
      const double edge = 0.38 + 0.55 * std::abs(2 * t - 1);
      return r <= edge;
    }
    case 6:  // striped square
      return box <= 0.75 && std::sin(u * pi * 3.5) > 0.0;
    case 7:  // checkerboard square
      return box <= 0.75 &&
             ((static_cast<int>(std::floor(u * 2.7)) +
               static_cast<int>(std::floor(v * 2.7))) & 1) == 0;
    case 8: {  // dot grid
      if (box > 0.8) return false;
      const double du = fract(u * 2.2) - 0.5;
      const double dv = fract(v * 2.2) - 0.5;
      return std::hypot(du, dv) <= 0.28;
    }
    default:  // bar, aspect 4:1
      return std::abs(u) <= 0.9 && std::abs(v) <= 0.22;
  }
}

inline double luminance(const std::array<double, 3>& c) {
  return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
}

}  // namespace detail

/// Renders one sample. Deterministic in (seed, label, index).
inline Tensor<float> render_sample(int label, int index, int size,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(detail::splitmix64(
      seed ^ detail::splitmix64((static_cast<std::uint64_t>(label) << 32) |
                                static_cast<std::uint32_t>(index))));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, 3> bg{}, fg{};
  do {
    for (auto& v : bg) v = unit(rng);
    for (auto& v : fg) v = unit(rng);
  } while (std::abs(detail::luminance(bg) - detail::luminance(fg)) < 0.3);

  const double radius = size * (0.22 + 0.16 * unit(rng));
  const double cx = radius + (size - 2 * radius) * unit(rng);
  const double cy = radius + (size - 2 * radius) * unit(rng);
  const double angle = 2 * std::numbers::pi * unit(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);

  Tensor<float> img(Shape{1, 3, size, size});
  constexpr int kSub = 3;  // kSub x kSub supersampling
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub - cx;
          const double py = y + (sy + 0.5) / kSub - cy;
          const double u = (ca * px + sa * py) / radius;
          const double v = (-sa * px + ca * py) / radius;
          hits += detail::shape_contains(label, u, v) ? 1 : 0;
        }
      }
      const double cover = static_cast<double>(hits) / (kSub * kSub);
      for (int c = 0; c < 3; ++c) {
        img(0, c, y, x) = static_cast<float>(fg[c] * cover + bg[c] * (1.0 - cover));
      }
    }
  }
  return img;
}

/// Sample i has label i % num_classes and per-class index i / num_classes;
/// the first 80% of each class's indices form the training split.
inline Dataset generate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (cfg.image_size < 16) throw std::invalid_argument("image_size must be >= 16");
  if (cfg.samples_per_class < 1) throw std::invalid_argument("samples_per_class must be >= 1");
  Dataset d;
  d.image_size = cfg.image_size;
  d.num_classes = cfg.num_classes;
  const int train_per_class = (cfg.samples_per_class * 8) / 10;
  const int total = cfg.num_classes * cfg.samples_per_class;
  for (int i = 0; i < total; ++i) {
    const int label = i % cfg.num_classes;
    const int index = i / cfg.num_classes;
    d.images.push_back(render_sample(label, index, cfg.image_size, cfg.seed));
    d.labels.push_back(label);
    d.split.push_back(index < train_per_class ? Split::train : Split::heldout);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6), 8 bits per channel.

inline std::uint8_t to_byte(float v) {
  const double scaled = std::floor(static_cast<double>(std::clamp(v, 0.0f, 1.0f)) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

inline void write_ppm(const Tensor<float>& img, const std::filesystem::path& path) {
  if (img.n() != 1 || img.c() != 3) {
    throw ShapeError("write_ppm: expected (1, 3, h, w), got " + img.shape().str());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataIoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << img.w() << " " << img.h() << "\n255\n";
  std::vector<char> buf(static_cast<std::size_t>(img.h()) * img.w() * 3);
  std::size_t k = 0;
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      for (int c = 0; c < 3; ++c) buf[k++] = static_cast<char>(to_byte(img(0, c, y, x)));
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataIoError("write failed: " + path.string());
}

inline Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataIoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P6") throw DataIoError(path.string() + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataIoError(path.string() + ": malformed PPM header");
  }
  if (w < 1 || h < 1 || maxval != 255) {
    throw DataIoError(path.string() + ": unsupported PPM geometry or depth");
  }
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw DataIoError(path.string() + ": truncated PPM payload");
  }
  Tensor<float> img(Shape{1, 3, h, w});
  std::size_t k = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img(0, c, y, x) = buf[k++] / 255.0f;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// On-disk dataset: manifest.csv (id,label,split) + images/<id>.ppm

inline std::string image_filename(std::size_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id << ".ppm";
  return os.str();
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw DataIoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,label,split\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    manifest << i << "," << d.labels[i] << "," << split_name(d.split[i]) << "\n";
    write_ppm(d.images[i], dir / "images" / image_filename(i));
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataIoError("cannot open " + (dir / "manifest.csv").string());
  std::string line;
  if (!std::getline(manifest, line) || line != "id,label,split") {
    throw DataIoError("manifest.csv: missing header 'id,label,split'");
  }
  Dataset d;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, label, split;
    if (!std::getline(row, id, ',') || !std::getline(row, label, ',') ||
        !std::getline(row, split)) {
      throw DataIoError("manifest.csv: malformed row '" + line + "'");
    }
    const std::size_t idx = std::stoul(id);
    d.images.push_back(read_ppm(dir / "images" / image_filename(idx)));
    d.labels.push_back(std::stoi(label));
    d.split.push_back(split == "train" ? Split::train : Split::heldout);
    d.num_classes = std::max(d.num_classes, d.labels.back() + 1);
  }
  if (!d.images.empty()) d.image_size = d.images.front().h();
  return d;
}

}  // namespace mope

#endif  // MOPE_SYNTH_HPP_

#ifndef MOPE_COMPLEXITY_HPP_
#define MOPE_COMPLEXITY_HPP_

// Static cost model over a NetworkSpec.
//
// Counting convention:
//   conv            MACs = k^2 * c_in * c_out * h_out * w_out
//   conv_transpose  MACs = k^2 * c_in * c_out * h_in * w_in
//   FLOPs           = 2 * MACs (convolutions only)
//   elementwise ops, reported separately and never folded into FLOPs:
//     instance_norm 2 / element, activation 1, add_skip 1, box_filter 9,
//     resize 4 (bilinear) or 0 (nearest), global_avg_pool 1 / input element.
//   Parameters are 4-byte reals; MB = 1e6 bytes.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mope/network.hpp"

namespace mope {

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t param_bytes = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t elementwise_ops = 0;
  Shape out_shape;
  int receptive_field = 1;  // cumulative, input to this layer's output
};

struct ComplexityReport {
  std::string network;
  int input_h = 0;
  int input_w = 0;
  std::vector<LayerCost> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_param_bytes = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t total_elementwise_ops = 0;

  double param_megabytes() const { return static_cast<double>(total_param_bytes) / 1e6; }
  double gflops() const { return static_cast<double>(total_flops) / 1e9; }
  double gmacs() const { return static_cast<double>(total_macs) / 1e9; }
};

inline constexpr std::uint64_t kBytesPerParam = 4;

inline std::uint64_t layer_params(const LayerSpec& l) {
  const std::uint64_t k2 = static_cast<std::uint64_t>(l.kernel) * l.kernel;
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::conv_transpose:
      return k2 * l.in_channels * l.out_channels + (l.bias ? l.out_channels : 0);
    case LayerKind::instance_norm:
      return 2ull * l.in_channels;
    default:
      return 0;
  }
}

struct ParamCount {
  std::uint64_t count = 0;
  std::uint64_t bytes = 0;

  double megabytes() const { return static_cast<double>(bytes) / 1e6; }
};

inline ParamCount count_params(const NetworkSpec& spec) {
  const Network net(spec);
  ParamCount pc;
  for (int i = 0; i < net.size(); ++i) pc.count += layer_params(net.layer(i));
  pc.bytes = pc.count * kBytesPerParam;
  return pc;
}

namespace detail {

// Receptive-field recurrence: rf += (k - 1) * jump; jump *= stride.
// Transposed convs divide the jump; skips and pooling do not contribute.
struct RfState {
  double rf = 1.0;
  double jump = 1.0;

  void apply(const LayerSpec& l) {
    switch (l.kind) {
      case LayerKind::conv:
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
        break;
      case LayerKind::conv_transpose:
        jump /= l.stride;
        rf += (l.kernel - 1) * jump;
        break;
      case LayerKind::box_filter:
        rf += 2 * jump;
        break;
      case LayerKind::resize:
        jump /= l.scale;
        break;
      default:
        break;
    }
  }
  int value() const { return static_cast<int>(std::lround(rf)); }
};

}  // namespace detail

inline int receptive_field(const NetworkSpec& spec) {
  const Network net(spec);
  detail::RfState st;
  for (int i = 0; i < net.size(); ++i) st.apply(net.layer(i));
  return st.value();
}

inline ComplexityReport count_flops(const NetworkSpec& spec, int h, int w) {
  const Network net(spec);
  const Shape input{1, spec.input_channels, h, w};
  const auto shapes = net.infer_shapes(input);
  ComplexityReport r;
  r.network = spec.name;
  r.input_h = h;
  r.input_w = w;
  detail::RfState rf;
  for (int i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    const Shape in = i == 0 ? input : shapes[i - 1];
    const Shape& out = shapes[i];
    const std::uint64_t out_elems = out.numel();
    const std::uint64_t k2 = static_cast<std::uint64_t>(l.kernel) * l.kernel;
    LayerCost row;
    row.name = std::to_string(i) + ":" + layer_kind_name(l.kind);
    row.params = layer_params(l);
    row.param_bytes = row.params * kBytesPerParam;
    row.out_shape = out;
    switch (l.kind) {
      case LayerKind::conv:
        row.macs = k2 * l.in_channels * l.out_channels * out.plane();
        break;
      case LayerKind::conv_transpose:
        row.macs = k2 * l.in_channels * l.out_channels * in.plane();
        break;
      case LayerKind::instance_norm:
        row.elementwise_ops = 2 * out_elems;
        break;
      case LayerKind::activation:
      case LayerKind::add_skip:
        row.elementwise_ops = out_elems;
        break;
      case LayerKind::box_filter:
        row.elementwise_ops = 9 * out_elems;
        break;
      case LayerKind::resize:
        row.elementwise_ops = l.resize_mode == ResizeMode::bilinear ? 4 * out_elems : 0;
        break;
      case LayerKind::global_avg_pool:
        row.elementwise_ops = in.numel();
        break;
      case LayerKind::concat_skip:
        break;
    }
    row.flops = 2 * row.macs;
    rf.apply(l);
    row.receptive_field = rf.value();
    r.total_params += row.params;
    r.total_param_bytes += row.param_bytes;
    r.total_macs += row.macs;
    r.total_flops += row.flops;
    r.total_elementwise_ops += row.elementwise_ops;
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline std::string convention_note() {
  return "convention: MAC = one multiply-accumulate in conv/conv_transpose; "
         "FLOP = 2 x MAC; norm/activation/skip ops listed separately";
}

inline std::string format_report(const ComplexityReport& r) {
  std::ostringstream os;
  os << r.network << " @ " << r.input_h << "x" << r.input_w << "\n";
  os << "# " << convention_note() << "\n";
  os << std::left << std::setw(22) << "layer" << std::right << std::setw(10) << "params"
     << std::setw(14) << "MACs" << std::setw(14) << "FLOPs" << std::setw(12) << "elem_ops"
     << std::setw(20) << "out_shape" << std::setw(5) << "RF" << "\n";
  for (const auto& row : r.rows) {
    os << std::left << std::setw(22) << row.name << std::right << std::setw(10) << row.params
       << std::setw(14) << row.macs << std::setw(14) << row.flops << std::setw(12)
       << row.elementwise_ops << std::setw(20) << row.out_shape.str() << std::setw(5)
       << row.receptive_field << "\n";
  }
  os << std::left << std::setw(22) << "total" << std::right << std::setw(10) << r.total_params
     << std::setw(14) << r.total_macs << std::setw(14) << r.total_flops << std::setw(12)
     << r.total_elementwise_ops << "\n";
  os << std::fixed << std::setprecision(4) << "param MB " << r.param_megabytes() << ", GMAC "
     << r.gmacs() << ", GFLOP " << r.gflops() << "\n";
  return os.str();
}

inline std::string report_csv(const ComplexityReport& r) {
  std::ostringstream os;
  os << "layer,params,param_bytes,macs,flops,elementwise_ops,out_n,out_c,out_h,out_w,"
        "receptive_field\n";
  for (const auto& row : r.rows) {
    os << row.name << "," << row.params << "," << row.param_bytes << "," << row.macs << ","
       << row.flops << "," << row.elementwise_ops << "," << row.out_shape.n << ","
       << row.out_shape.c << "," << row.out_shape.h << "," << row.out_shape.w << ","
       << row.receptive_field << "\n";
  }
  os << "total," << r.total_params << "," << r.total_param_bytes << "," << r.total_macs << ","
     << r.total_flops << "," << r.total_elementwise_ops << ",,,,,\n";
  return os.str();
}

/// Published figures for the same two networks at 244x244, for comparison.
struct ReferenceCost {
  double param_mb;
  double gflop;
};
inline constexpr ReferenceCost kReferenceDenoiser{0.187, 0.171};
inline constexpr ReferenceCost kReferenceGating{0.096, 0.034};

/// Side-by-side summary of the denoiser and gate, one row per quantity.
inline std::string format_overhead_table(const ComplexityReport& denoiser,
                                         const ComplexityReport& gating) {
  std::ostringstream os;
  os << std::fixed;
  os << "input " << denoiser.input_h << "x" << denoiser.input_w << "\n";
  os << "# " << convention_note() << "\n";
  os << std::left << std::setw(26) << "" << std::right << std::setw(14) << "Denoise"
     << std::setw(14) << "Gating" << "\n";
  auto line = [&](const char* label, double a, double b, int prec) {
    os << std::left << std::setw(26) << label << std::right << std::setprecision(prec)
       << std::setw(14) << a << std::setw(14) << b << "\n";
  };
  line("# params", static_cast<double>(denoiser.total_params),
       static_cast<double>(gating.total_params), 0);
  line("# params (MB)", denoiser.param_megabytes(), gating.param_megabytes(), 4);
  line("  reference (MB)", kReferenceDenoiser.param_mb, kReferenceGating.param_mb, 3);
  line("Ops (GMAC)", denoiser.gmacs(), gating.gmacs(), 4);
  line("Ops (GFLOP = 2 MAC)", denoiser.gflops(), gating.gflops(), 4);
  line("  reference (GFLOP)", kReferenceDenoiser.gflop, kReferenceGating.gflop, 3);
  line("  GFLOP / reference", denoiser.gflops() / kReferenceDenoiser.gflop,
       gating.gflops() / kReferenceGating.gflop, 2);
  line("  GMAC / reference", denoiser.gmacs() / kReferenceDenoiser.gflop,
       gating.gmacs() / kReferenceGating.gflop, 2);
  os << "note: parameter sizes agree with the reference within "
     << std::setprecision(1)
     << 100.0 * std::max(std::abs(denoiser.param_megabytes() / kReferenceDenoiser.param_mb - 1),
                         std::abs(gating.param_megabytes() / kReferenceGating.param_mb - 1))
     << "%; operation counts differ because the reference counting convention is "
        "unstated, so both MAC and 2*MAC totals are shown.\n";
  return os.str();
}

}  // namespace mope

#endif  // MOPE_COMPLEXITY_HPP_

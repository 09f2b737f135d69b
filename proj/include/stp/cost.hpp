#pragma once

#include <iomanip>

#include "stp/stack.hpp"

namespace stp {

// Symbols of the closed-form training-cost model. `param_multiple` is the
// cell's parameter/FLOPs multiple of one square convolution (8 for the LSTM
// cell here); `space_multiple` is the activation-space multiple, never below
// the former. Both default to 1 where only ratios matter, since they cancel
// in every reduction ratio.
struct CostModelParams {
  int layers = 6;         // N
  int steps = 19;         // R = m + n - 1
  int batch = 4;          // b
  int channels = 64;      // c
  int height = 64;        // h
  int width = 64;         // w
  int kernel = 3;         // k
  double param_multiple = 8.0;  // per-cell multiple of c^2 k^2; 0 drops M_par
  double space_multiple = 8.0;  // per-cell multiple of b c h w

  void validate() const {
    if (layers < 1 || steps < 1 || batch < 1 || channels < 1 || height < 1 ||
        width < 1 || kernel < 1)
      throw config_error("cost model: all size fields must be positive");
    if (param_multiple < 0 || space_multiple <= 0)
      throw config_error("cost model: complexity multiples must be positive");
    if (space_multiple < param_multiple)
      throw config_error("cost model: space multiple must be >= parameter multiple");
  }
};

namespace detail {

// Normalized multi-scale coefficients. Products are ordered so the common
// cases (geometric sums of powers of 1/4) evaluate exactly in binary
// floating point: 256*(1-q) and 16*(1-q) are exact, and the final division
// by 3 is exact whenever the true value has a short binary mantissa.
inline double ms_mem_coeff(int layers) {
  if (layers % 2 == 0) {
    const double q = std::ldexp(1.0, -layers);  // (1/4)^(N/2)
    return 256.0 * (1.0 - q) / 3.0;
  }
  const double q = std::ldexp(1.0, -(layers - 1));  // (1/4)^((N-1)/2)
  return 256.0 * (1.0 - q) / 3.0 + 32.0 * q;
}

inline double ms_flops_coeff(int layers) {
  if (layers % 2 == 0) {
    const double q = std::ldexp(1.0, -layers);
    return 16.0 * (1.0 - q) / 3.0;
  }
  const double q = std::ldexp(1.0, -(layers - 1));
  return 16.0 * (1.0 - q) / 3.0 + 2.0 * q;
}

}  // namespace detail

// Model-parameter memory in bits: 32 N Utilde c^2 k^2.
inline double mem_par(const CostModelParams& p) {
  p.validate();
  return 32.0 * p.layers * p.param_multiple * double(p.channels) * p.channels *
         p.kernel * p.kernel;
}

// Forward-outputs memory in bits. Flat: 32 R N U b c h w. Multi-scale: the
// mirror-pyramid geometric sum (odd N keeps a single innermost term).
inline double mem_out(const CostModelParams& p, bool multi_scale) {
  p.validate();
  const double base = p.space_multiple * double(p.steps) * p.batch * p.channels *
                      double(p.height) * p.width;
  if (!multi_scale) return 32.0 * p.layers * base;
  return detail::ms_mem_coeff(p.layers) * base;
}

// Full training memory: parameters + Adam buffers (4x model memory) plus
// forward and backward outputs (2x outputs memory).
inline double mem_total(const CostModelParams& p, bool multi_scale) {
  return 4.0 * mem_par(p) + 2.0 * mem_out(p, multi_scale);
}

inline double memory_reduction(const CostModelParams& p) {
  const double flat = mem_total(p, false);
  if (flat == 0.0) return 0.0;
  return (flat - mem_total(p, true)) / flat;
}

// Training FLOPs (convolutions only). Flat: 2 R N Utilde b c^2 h w k^2.
inline double flops(const CostModelParams& p, bool multi_scale) {
  p.validate();
  const double base = p.param_multiple * double(p.steps) * p.batch *
                      double(p.channels) * p.channels * double(p.height) * p.width *
                      p.kernel * p.kernel;
  if (!multi_scale) return 2.0 * p.layers * base;
  return detail::ms_flops_coeff(p.layers) * base;
}

inline double flops_reduction(const CostModelParams& p) {
  const double flat = flops(p, false);
  if (flat == 0.0) return 0.0;
  return (flat - flops(p, true)) / flat;
}

struct CostReport {
  CostModelParams params;
  double mem_par_bits = 0;
  double mem_out_flat_bits = 0, mem_out_ms_bits = 0;
  double mem_total_flat_bits = 0, mem_total_ms_bits = 0;
  double flops_flat = 0, flops_ms = 0;
  double mem_reduction = 0, flops_reduction = 0;
};

inline CostReport cost_report(const CostModelParams& p) {
  CostReport r;
  r.params = p;
  r.mem_par_bits = mem_par(p);
  r.mem_out_flat_bits = mem_out(p, false);
  r.mem_out_ms_bits = mem_out(p, true);
  r.mem_total_flat_bits = mem_total(p, false);
  r.mem_total_ms_bits = mem_total(p, true);
  r.flops_flat = flops(p, false);
  r.flops_ms = flops(p, true);
  r.mem_reduction = memory_reduction(p);
  r.flops_reduction = stp::flops_reduction(p);
  return r;
}

inline std::string human_bytes(double bits) {
  const double bytes = bits / 8.0;
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  if (bytes >= 1e9)
    os << bytes / 1e9 << " GB";
  else if (bytes >= 1e6)
    os << bytes / 1e6 << " MB";
  else if (bytes >= 1e3)
    os << bytes / 1e3 << " kB";
  else
    os << bytes << " B";
  return os.str();
}

inline std::string render_cost_text(const CostReport& r) {
  std::ostringstream os;
  const auto& p = r.params;
  os << "cost model: N=" << p.layers << " R=" << p.steps << " b=" << p.batch
     << " c=" << p.channels << " h=" << p.height << " w=" << p.width
     << " k=" << p.kernel << " param_multiple=" << p.param_multiple
     << " space_multiple=" << p.space_multiple << "\n";
  os << "  parameters            : " << std::fixed << std::setprecision(0)
     << r.mem_par_bits / 32.0 << " (" << human_bytes(r.mem_par_bits) << ")\n";
  os << "  outputs memory  flat  : " << human_bytes(r.mem_out_flat_bits) << "\n";
  os << "  outputs memory  ms    : " << human_bytes(r.mem_out_ms_bits) << "\n";
  os << "  training memory flat  : " << human_bytes(r.mem_total_flat_bits) << "\n";
  os << "  training memory ms    : " << human_bytes(r.mem_total_ms_bits) << "\n";
  os << std::setprecision(3);
  os << "  flops           flat  : " << r.flops_flat << "\n";
  os << "  flops           ms    : " << r.flops_ms << "\n";
  os << std::setprecision(4);
  os << "  memory reduction      : " << 100.0 * r.mem_reduction << "%\n";
  os << "  flops reduction       : " << 100.0 * r.flops_reduction << "%\n";
  return os.str();
}

inline std::string render_cost_csv(const CostReport& r) {
  std::ostringstream os;
  os << "variant,N,R,b,c,h,w,k,M_par_bits,M_out_bits,M_all_bits,flops,"
        "mem_reduction,flops_reduction\n";
  const auto& p = r.params;
  os << std::setprecision(17);
  auto row = [&](const char* variant, double out, double total, double fl) {
    os << variant << "," << p.layers << "," << p.steps << "," << p.batch << ","
       << p.channels << "," << p.height << "," << p.width << "," << p.kernel << ","
       << r.mem_par_bits << "," << out << "," << total << "," << fl << ","
       << r.mem_reduction << "," << r.flops_reduction << "\n";
  };
  row("plain", r.mem_out_flat_bits, r.mem_total_flat_bits, r.flops_flat);
  row("ms", r.mem_out_ms_bits, r.mem_total_ms_bits, r.flops_ms);
  return os.str();
}

struct InstrumentResult {
  int64_t stored_elements = 0;
  int64_t conv_flops = 0;
};

// Empirical counterpart of the closed forms: runs one recorded forward
// sequence and reads the tape's stored-activation and convolution-FLOPs
// counters.
inline InstrumentResult instrument(Model& m, int batch, int input_h, int input_w) {
  Tape tape;
  std::vector<Tensor> frames;
  Rng rng(7);
  const int total = m.config.history_len + m.config.horizon_len;
  for (int t = 0; t < total; ++t) {
    Tensor f = Tensor::zeros({batch, m.config.in_channels, input_h, input_w});
    for (float& v : *f.data) v = rng.uniform_f(0.f, 1.f);
    frames.push_back(std::move(f));
  }
  std::vector<std::vector<uint8_t>> mask(m.config.horizon_len - 1,
                                         std::vector<uint8_t>(batch, 1));
  forward_sequence(&tape, m, frames, mask);
  return {tape.stored_elements(), tape.conv_flops()};
}

}  // namespace stp

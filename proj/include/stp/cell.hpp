#pragma once

#include "stp/ops.hpp"
#include "stp/optim.hpp"

namespace stp {

enum class CellKind { convlstm, probe };

inline const char* to_string(CellKind k) {
  return k == CellKind::convlstm ? "convlstm" : "probe";
}

// Declared per-layer recurrent state. Slot names follow the roles a cell
// carries along the time axis; H is always present.
struct MemoryList {
  std::vector<std::pair<std::string, Tensor>> slots;

  bool has(const std::string& name) const {
    for (const auto& s : slots)
      if (s.first == name) return true;
    return false;
  }
  Tensor& at(const std::string& name) {
    for (auto& s : slots)
      if (s.first == name) return s.second;
    throw shape_error("memory list has no slot '" + name + "'");
  }
  const Tensor& at(const std::string& name) const {
    return const_cast<MemoryList*>(this)->at(name);
  }
  void put(const std::string& name, Tensor t) {
    for (auto& s : slots)
      if (s.first == name) { s.second = std::move(t); return; }
    slots.emplace_back(name, std::move(t));
  }
};

struct CellSpec {
  CellKind kind = CellKind::convlstm;
  int hidden_channels = 64;
  int kernel = 3;
  bool uses_zigzag = false;
  bool uses_diagonal = false;
  std::vector<std::string> memory_slots{"H", "C"};
};

// Per-layer, per-timestep tensor bundle.
struct CellStepIO {
  Tensor x;
  MemoryList memories_in;
  std::optional<Tensor> m_in;
  std::optional<Tensor> diag_in;

  Tensor h_out;
  MemoryList memories_out;
  std::optional<Tensor> m_out;
};

class Cell {
 public:
  virtual ~Cell() = default;
  virtual const CellSpec& spec() const = 0;
  virtual void step(Tape* tape, CellStepIO& io) = 0;
  virtual std::vector<Parameter*> parameters() = 0;

  MemoryList zero_state(int batch, int h, int w) const {
    MemoryList ml;
    for (const auto& name : spec().memory_slots)
      ml.put(name, Tensor::zeros({batch, spec().hidden_channels, h, w}));
    return ml;
  }
};

// Number of parameters the complexity model assigns to one layer: the
// per-cell multiple of a square convolution's c^2 k^2 (8 for this LSTM
// cell; biases and the true first-layer input width are ignored).
inline int64_t model_param_count(const CellSpec& spec) {
  if (spec.kind == CellKind::probe) return 0;
  return 8ll * spec.hidden_channels * spec.hidden_channels * spec.kernel * spec.kernel;
}

// Exact number of instantiated parameters, biases and true input width included.
inline int64_t cell_param_count(const CellSpec& spec, int in_channels) {
  if (spec.kind == CellKind::probe) return 0;
  const int64_t c = spec.hidden_channels, k = spec.kernel;
  return 4 * c * k * k * (in_channels + c) + 4 * c;
}

// Convolutional LSTM. Gates are computed from two fused convolutions
// (input-to-state with bias, state-to-state without), split as [i, f, g, o]:
//   i = sigmoid(Wix*x + Wih*h),  f = sigmoid(Wfx*x + Wfh*h),
//   g = tanh(Wgx*x + Wgh*h),     o = sigmoid(Wox*x + Woh*h),
//   c' = f (.) c + i (.) g,      h' = o (.) tanh(c').
class ConvLstmCell : public Cell {
 public:
  ConvLstmCell(int in_channels, int hidden_channels, int kernel, Rng& rng)
      : cin_(in_channels) {
    spec_.kind = CellKind::convlstm;
    spec_.hidden_channels = hidden_channels;
    spec_.kernel = kernel;
    spec_.memory_slots = {"H", "C"};
    const int c = hidden_channels, k = kernel;

    wx_ = Parameter("wx", Tensor::zeros({4 * c, in_channels, k, k}));
    wh_ = Parameter("wh", Tensor::zeros({4 * c, c, k, k}));
    bias_ = Parameter("bias", Tensor::zeros({1, 4 * c, 1, 1}));
    const float bx = 1.f / std::sqrt(float(in_channels * k * k));
    const float bh = 1.f / std::sqrt(float(c * k * k));
    for (float& v : *wx_.value.data) v = rng.uniform_f(-bx, bx);
    for (float& v : *wh_.value.data) v = rng.uniform_f(-bh, bh);
    for (float& v : *bias_.value.data) v = rng.uniform_f(-bx, bx);
    // forget-gate bias starts at 1 to keep early recurrent training stable
    for (int i = c; i < 2 * c; ++i) (*bias_.value.data)[i] = 1.f;
  }

  const CellSpec& spec() const override { return spec_; }

  std::vector<Parameter*> parameters() override { return {&wx_, &wh_, &bias_}; }

  void step(Tape* tape, CellStepIO& io) override {
    const int c = spec_.hidden_channels;
    Tensor& h_prev = io.memories_in.at("H");
    Tensor& c_prev = io.memories_in.at("C");
    if (h_prev.shape != c_prev.shape)
      throw shape_error("convlstm: H and C shapes differ: " + h_prev.shape.str() +
                        " vs " + c_prev.shape.str());
    if (io.x.shape.c != cin_)
      throw shape_error("convlstm: input has " + std::to_string(io.x.shape.c) +
                        " channels, cell expects " + std::to_string(cin_));
    if (io.x.shape.h != h_prev.shape.h || io.x.shape.w != h_prev.shape.w)
      throw shape_error("convlstm: input scale " + io.x.shape.str() +
                        " does not match state scale " + h_prev.shape.str());

    Tensor gates = add(tape, conv2d(tape, io.x, wx_.value, &bias_.value),
                       conv2d(tape, h_prev, wh_.value));
    Tensor in_gate = sigmoid(tape, slice_channels(tape, gates, 0, c));
    Tensor forget_gate = sigmoid(tape, slice_channels(tape, gates, c, 2 * c));
    Tensor cand = tanh(tape, slice_channels(tape, gates, 2 * c, 3 * c));
    Tensor out_gate = sigmoid(tape, slice_channels(tape, gates, 3 * c, 4 * c));

    Tensor c_new = add(tape, hadamard(tape, forget_gate, c_prev),
                       hadamard(tape, in_gate, cand));
    Tensor h_new = hadamard(tape, out_gate, tanh(tape, c_new));

    io.h_out = h_new;
    io.memories_out.put("H", h_new);
    io.memories_out.put("C", c_new);
  }

 private:
  CellSpec spec_;
  int cin_;
  Parameter wx_, wh_, bias_;
};

// Parameter-free routing oracle. Integer inputs stay integer-exact, so stack
// wiring (scales, skips, zigzag, diagonal) can be asserted against a scalar
// recurrence computed outside the tensor core.
class ProbeCell : public Cell {
 public:
  ProbeCell(int channels, int kernel, bool uses_zigzag, bool uses_diagonal) {
    spec_.kind = CellKind::probe;
    spec_.hidden_channels = channels;
    spec_.kernel = kernel;
    spec_.uses_zigzag = uses_zigzag;
    spec_.uses_diagonal = uses_diagonal;
    spec_.memory_slots = {"H", "C"};
  }

  const CellSpec& spec() const override { return spec_; }

  std::vector<Parameter*> parameters() override { return {}; }

  void step(Tape* tape, CellStepIO& io) override {
    Tensor& h_prev = io.memories_in.at("H");
    Tensor& c_prev = io.memories_in.at("C");
    auto check = [&](const Tensor& t, const char* what) {
      if (t.shape != io.x.shape)
        throw shape_error(std::string("probe: ") + what + " scale " + t.shape.str() +
                          " does not match input scale " + io.x.shape.str());
    };
    check(h_prev, "H");
    check(c_prev, "C");
    if (io.m_in) check(*io.m_in, "zigzag memory");
    if (io.diag_in) check(*io.diag_in, "diagonal state");

    Tensor h = add(tape, io.x, h_prev);
    if (io.m_in) h = add(tape, h, *io.m_in);
    if (io.diag_in) h = add(tape, h, *io.diag_in);

    io.h_out = h;
    io.memories_out.put("H", h);
    io.memories_out.put("C", add_scalar(tape, c_prev, 1.f));
    if (spec_.uses_zigzag)
      io.m_out = io.m_in ? add(tape, *io.m_in, h) : h;
  }

 private:
  CellSpec spec_;
};

inline std::unique_ptr<Cell> make_cell(const CellSpec& spec, int in_channels, Rng& rng) {
  if (spec.kind == CellKind::convlstm) {
    if (spec.uses_zigzag || spec.uses_diagonal)
      throw config_error("convlstm cell does not use zigzag or diagonal routing");
    return std::make_unique<ConvLstmCell>(in_channels, spec.hidden_channels,
                                          spec.kernel, rng);
  }
  if (spec.hidden_channels != in_channels)
    throw config_error("probe cell is parameter-free; hidden channels must equal "
                       "input channels");
  return std::make_unique<ProbeCell>(spec.hidden_channels, spec.kernel,
                                     spec.uses_zigzag, spec.uses_diagonal);
}

}  // namespace stp

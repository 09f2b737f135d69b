#pragma once

#include "stp/cell.hpp"

namespace stp {

enum class SkipMode { none, unet };

inline const char* to_string(SkipMode m) { return m == SkipMode::none ? "none" : "unet"; }

// Per-layer scale, stored as the power-of-two downsampling depth
// (depth d means a linear scale of 2^-d).
struct ScaleSchedule {
  std::vector<int> depth;

  int layers() const { return int(depth.size()); }
  double scale(int l) const { return std::ldexp(1.0, -depth[l]); }
  int max_depth() const {
    int d = 0;
    for (int v : depth) d = std::max(d, v);
    return d;
  }
};

// Flat stacks run every layer at full resolution. Multi-scale stacks form a
// mirror pyramid: resolution halves per layer toward the middle and is
// restored symmetrically; odd N has a single innermost layer, even N a
// doubled one.
inline ScaleSchedule scale_schedule(int layers, bool multi_scale) {
  if (layers < 1) throw config_error("scale_schedule: layer count must be >= 1");
  ScaleSchedule s;
  s.depth.resize(layers, 0);
  if (multi_scale)
    for (int l = 0; l < layers; ++l) s.depth[l] = std::min(l, layers - 1 - l);
  return s;
}

struct StackConfig {
  CellKind cell = CellKind::convlstm;
  int layers = 6;
  int hidden_channels = 64;
  int kernel = 3;
  bool multi_scale = false;
  SkipMode skip = SkipMode::none;
  bool zigzag = false;    // probe cells only
  bool diagonal = false;  // probe cells only
  int in_channels = 1;
  int out_channels = 1;
  int history_len = 10;  // observed frames
  int horizon_len = 10;  // predicted frames

  void validate() const {
    if (layers < 1) throw config_error("config: layers must be >= 1");
    if (history_len < 1 || horizon_len < 1)
      throw config_error("config: history and horizon lengths must be >= 1");
    if (hidden_channels < 1 || in_channels < 1 || out_channels < 1)
      throw config_error("config: channel counts must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
      throw config_error("config: kernel size must be odd");
    if (skip == SkipMode::unet && !multi_scale)
      throw config_error("config: skip mode 'unet' requires the multi-scale variant");
  }

  CellSpec cell_spec() const {
    CellSpec cs;
    cs.kind = cell;
    cs.hidden_channels = hidden_channels;
    cs.kernel = kernel;
    cs.uses_zigzag = zigzag;
    cs.uses_diagonal = diagonal;
    return cs;
  }
};

// Chains pooling or upsampling steps until the requested depth is reached.
// Equal depths pass the tensor through untouched.
inline Tensor resample_to_depth(Tape* tape, const Tensor& x, int from, int to) {
  Tensor cur = x;
  for (; from < to; ++from) cur = maxpool2(tape, cur);
  for (; from > to; --from) cur = upsample_bilinear2(tape, cur);
  return cur;
}

class Model {
 public:
  StackConfig config;
  ScaleSchedule schedule;
  std::vector<std::unique_ptr<Cell>> cells;
  Parameter head_w, head_b;  // 1x1 projection from top-layer H to data channels

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& cell : cells)
      for (Parameter* p : cell->parameters()) out.push_back(p);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  void attach(Tape& tape) {
    for (Parameter* p : parameters()) p->attach(tape);
  }
  void collect_grads(Tape& tape) {
    for (Parameter* p : parameters()) p->collect(tape);
  }

  int64_t exact_param_count() {
    int64_t n = 0;
    for (Parameter* p : parameters()) n += p->value.numel();
    return n;
  }

  // Closed-form count: layers x 8 c^2 k^2 for the LSTM cell, no head.
  int64_t model_param_count_total() const {
    int64_t n = 0;
    for (const auto& cell : cells) n += model_param_count(cell->spec());
    return n;
  }

  int spatial_divisor() const { return 1 << schedule.max_depth(); }

  void check_input(const Shape& s) const {
    if (s.c != config.in_channels)
      throw shape_error("input has " + std::to_string(s.c) + " channels, model expects " +
                        std::to_string(config.in_channels));
    const int d = spatial_divisor();
    if (s.h % d != 0 || s.w % d != 0)
      throw config_error("input extent " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " must be divisible by " + std::to_string(d) +
                         " for a " + std::to_string(config.layers) + "-layer schedule");
  }
};

inline Model build_stack(const StackConfig& config, uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.schedule = scale_schedule(config.layers, config.multi_scale);
  Rng rng(hash_combine(seed, 0x57a9));
  for (int l = 0; l < config.layers; ++l) {
    const int cin = (l == 0) ? config.in_channels : config.hidden_channels;
    m.cells.push_back(make_cell(config.cell_spec(), cin, rng));
    for (Parameter* p : m.cells.back()->parameters())
      p->name = "layer" + std::to_string(l) + "." + p->name;
  }
  const int c = config.hidden_channels;
  m.head_w = Parameter("head.w", Tensor::zeros({config.out_channels, c, 1, 1}));
  m.head_b = Parameter("head.b", Tensor::zeros({1, config.out_channels, 1, 1}));
  const float bound = 1.f / std::sqrt(float(c));
  for (float& v : *m.head_w.value.data) v = rng.uniform_f(-bound, bound);
  for (float& v : *m.head_b.value.data) v = rng.uniform_f(-bound, bound);
  return m;
}

// Recurrent state carried across timesteps: per-layer memory lists, the
// zigzag memory leaving the top layer, and the previous step's per-layer
// hidden states for diagonal routing.
struct StackState {
  std::vector<MemoryList> memories;
  std::optional<Tensor> m_top;
  std::vector<Tensor> prev_h;
  int t = 0;
};

inline StackState init_state(const Model& m, int batch, int h, int w) {
  m.check_input({batch, m.config.in_channels, h, w});
  StackState st;
  for (int l = 0; l < m.config.layers; ++l) {
    const int d = m.schedule.depth[l];
    st.memories.push_back(m.cells[l]->zero_state(batch, h >> d, w >> d));
  }
  return st;
}

// One timestep through the whole stack. Hidden states flow upward with
// pooling on descending transitions and bilinear upsampling on ascending
// ones; unet skips add each encoder output to the equal-scale mirror
// decoder layer's input; zigzag memory climbs the stack and re-enters
// layer 0 at the next step; diagonal routing feeds the previous step's
// lower-layer hidden state, resampled to the receiving layer's scale.
inline Tensor step_time(Tape* tape, Model& m, const Tensor& x, StackState& st,
                        std::vector<Tensor>* layer_h_out = nullptr) {
  m.check_input(x.shape);
  const int N = m.config.layers;
  const auto& depth = m.schedule.depth;
  const bool zigzag = m.config.zigzag;
  const bool diagonal = m.config.diagonal;
  const int batch = x.shape.b;

  std::optional<Tensor> m_cur;
  if (zigzag) {
    if (st.m_top)
      m_cur = resample_to_depth(tape, *st.m_top, depth[N - 1], depth[0]);
    else
      m_cur = Tensor::zeros({batch, m.config.hidden_channels, x.shape.h >> depth[0],
                             x.shape.w >> depth[0]});
  }

  std::vector<Tensor> layer_h(N);
  Tensor cur = x;
  for (int l = 0; l < N; ++l) {
    CellStepIO io;
    io.x = cur;
    io.memories_in = st.memories[l];
    if (m_cur) io.m_in = m_cur;
    if (diagonal) {
      if (l == 0 || st.prev_h.empty())
        io.diag_in = Tensor::zeros({batch, m.config.hidden_channels,
                                    x.shape.h >> depth[l], x.shape.w >> depth[l]});
      else
        io.diag_in = resample_to_depth(tape, st.prev_h[l - 1], depth[l - 1], depth[l]);
    }
    m.cells[l]->step(tape, io);
    st.memories[l] = io.memories_out;
    layer_h[l] = io.h_out;
    if (io.m_out) m_cur = io.m_out;

    if (l + 1 < N) {
      Tensor nxt = resample_to_depth(tape, io.h_out, depth[l], depth[l + 1]);
      const int partner = N - 1 - (l + 1);
      if (m.config.skip == SkipMode::unet && partner < l + 1)
        nxt = add(tape, nxt, layer_h[partner]);
      cur = nxt;
      if (m_cur) m_cur = resample_to_depth(tape, *m_cur, depth[l], depth[l + 1]);
    }
  }

  st.m_top = m_cur;
  st.prev_h = layer_h;
  st.t += 1;
  if (layer_h_out) *layer_h_out = layer_h;
  return conv2d(tape, layer_h[N - 1], m.head_w.value, &m.head_b.value);
}

// Runs the full length-(m+n) sequence: the first m-1 steps consume ground
// truth, the decoder consumes ground truth where the sampling mask is true
// and the model's previous prediction otherwise. Returns all m+n-1
// next-frame predictions; the forecast is the last n of them.
inline std::vector<Tensor> forward_sequence(
    Tape* tape, Model& m, const std::vector<Tensor>& frames,
    const std::vector<std::vector<uint8_t>>& mask) {
  const int total = m.config.history_len + m.config.horizon_len;
  if (int(frames.size()) != total)
    throw shape_error("forward_sequence: expected " + std::to_string(total) +
                      " frames, got " + std::to_string(frames.size()));
  if (int(mask.size()) != m.config.horizon_len - 1)
    throw shape_error("forward_sequence: sampling mask must have horizon-1 = " +
                      std::to_string(m.config.horizon_len - 1) + " steps, got " +
                      std::to_string(mask.size()));
  const int batch = frames[0].shape.b;
  for (const auto& step : mask)
    if (int(step.size()) != batch)
      throw shape_error("forward_sequence: mask entries must match batch size");

  if (tape) m.attach(*tape);
  StackState st = init_state(m, batch, frames[0].shape.h, frames[0].shape.w);
  std::vector<Tensor> preds;
  preds.reserve(total - 1);
  for (int t = 0; t < total - 1; ++t) {
    Tensor input;
    if (t < m.config.history_len)
      input = frames[t];
    else
      input = blend_batch(tape, mask[t - m.config.history_len], frames[t], preds.back());
    preds.push_back(step_time(tape, m, input, st));
  }
  return preds;
}

// Receptive field in input pixels of layer `upto` under the subsampling
// model: each cell step adds (k-1) at the layer's jump, pooling doubles the
// jump, upsampling halves it; gates and pointwise combinations add nothing.
inline int receptive_field_theoretical(const ScaleSchedule& schedule, int kernel,
                                       int upto_layer) {
  if (upto_layer < 0 || upto_layer >= schedule.layers())
    throw config_error("receptive_field_theoretical: layer out of range");
  int64_t rf = 1;
  for (int l = 0; l <= upto_layer; ++l) rf += int64_t(kernel - 1) * (1ll << schedule.depth[l]);
  return int(rf);
}

struct RfBox {
  int y0 = 0, y1 = -1, x0 = 0, x1 = -1;
  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
  bool empty() const { return y1 < y0 || x1 < x0; }
};

// Overwrites every parameter with positive values so no gradient path can
// cancel; used by the measured receptive-field probe.
inline void randomize_positive(Model& m, uint64_t seed, float lo = 0.05f, float hi = 0.3f) {
  Rng rng(hash_combine(seed, 0x9f1e));
  for (Parameter* p : m.parameters())
    for (float& v : *p->value.data) v = rng.uniform_f(lo, hi);
}

// Measures the support of d(H_t^layer[probe]) / d(X_t) on a constant input
// sequence: the tight bounding box of |gradient| > 1e-12.
inline RfBox receptive_field_empirical(Model& m, int layer, int timestep, int probe_y,
                                       int probe_x, int input_h, int input_w) {
  if (layer < 0 || layer >= m.config.layers)
    throw config_error("receptive_field_empirical: layer out of range");
  const int d = m.schedule.depth[layer];
  const int lh = input_h >> d, lw = input_w >> d;
  if (probe_y < 0 || probe_y >= lh || probe_x < 0 || probe_x >= lw)
    throw config_error("receptive_field_empirical: probe position outside the layer "
                       "extent " + std::to_string(lh) + "x" + std::to_string(lw));

  Tape tape;
  m.attach(tape);
  std::vector<Tensor> frames;
  for (int t = 0; t <= timestep; ++t) {
    frames.push_back(Tensor::full({1, m.config.in_channels, input_h, input_w}, 0.5f));
    tape.leaf(frames.back());
  }
  StackState st = init_state(m, 1, input_h, input_w);
  std::vector<Tensor> layer_h;
  for (int t = 0; t <= timestep; ++t) step_time(&tape, m, frames[t], st, &layer_h);

  Tensor picked = layer_h[layer];
  Tensor onehot = Tensor::zeros(picked.shape);
  (*onehot.data)[int64_t(probe_y) * lw + probe_x] = 1.f;  // batch 0, channel 0
  Tensor loss = sum_all(&tape, hadamard(&tape, picked, onehot));
  tape.backward(loss);

  RfBox box;
  box.y0 = input_h;
  box.x0 = input_w;
  const auto& g = tape.grad(frames[timestep].node);
  for (int c = 0; c < m.config.in_channels; ++c)
    for (int y = 0; y < input_h; ++y)
      for (int x = 0; x < input_w; ++x) {
        const float v = g[(int64_t(c) * input_h + y) * input_w + x];
        if (std::fabs(v) > 1e-12f) {
          box.y0 = std::min(box.y0, y);
          box.y1 = std::max(box.y1, y);
          box.x0 = std::min(box.x0, x);
          box.x1 = std::max(box.x1, x);
        }
      }
  return box;
}

}  // namespace stp

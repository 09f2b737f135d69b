#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <sstream>

#include "stp/common.hpp"

namespace stp {

// Dense rank-4 shape: batch, channels, height, width.
struct Shape {
  int b = 1, c = 1, h = 1, w = 1;

  int64_t numel() const { return int64_t(b) * c * h * w; }

  bool operator==(const Shape& o) const {
    return b == o.b && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "[" << b << "," << c << "," << h << "," << w << "]";
    return os.str();
  }
};

inline void check_shape(const Shape& s) {
  if (s.b < 1 || s.c < 1 || s.h < 1 || s.w < 1)
    throw shape_error("tensor extents must all be >= 1, got " + s.str());
}

// Value tensor. Data is shared and treated as immutable once an op has
// produced it; `node` ties the tensor into the tape that recorded it.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<float>> data;
  int node = -1;

  Tensor() : data(std::make_shared<std::vector<float>>(1, 0.f)) {}
  Tensor(const Shape& s, std::shared_ptr<std::vector<float>> d, int n = -1)
      : shape(s), data(std::move(d)), node(n) {}

  static Tensor zeros(const Shape& s) { return full(s, 0.f); }

  static Tensor full(const Shape& s, float v) {
    check_shape(s);
    return Tensor(s, std::make_shared<std::vector<float>>(s.numel(), v));
  }

  static Tensor from(const Shape& s, std::vector<float> values) {
    check_shape(s);
    if (int64_t(values.size()) != s.numel())
      throw shape_error("data length " + std::to_string(values.size()) +
                        " does not match shape " + s.str());
    return Tensor(s, std::make_shared<std::vector<float>>(std::move(values)));
  }

  int64_t numel() const { return shape.numel(); }
  float* ptr() { return data->data(); }
  const float* ptr() const { return data->data(); }

  float at(int bi, int ci, int yi, int xi) const {
    return (*data)[((int64_t(bi) * shape.c + ci) * shape.h + yi) * shape.w + xi];
  }

  bool finite() const {
    for (float v : *data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Reverse-mode tape. Operations register their output shape plus a backward
// closure; gradients are per-node buffers filled during backward().
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  struct Node {
    Shape shape;
    BackwardFn backward;  // empty for leaves
  };

  // Registers an input tensor so gradients w.r.t. it can be read back.
  // Leaves are not operation outputs and do not count as stored activations.
  int leaf(Tensor& t) {
    nodes_.push_back(Node{t.shape, BackwardFn{}});
    t.node = int(nodes_.size()) - 1;
    return t.node;
  }

  int record(const Shape& out, BackwardFn fn) {
    nodes_.push_back(Node{out, std::move(fn)});
    stored_ += out.numel();
    return int(nodes_.size()) - 1;
  }

  void backward(const Tensor& loss) {
    if (loss.node < 0 || loss.node >= int(nodes_.size()))
      throw shape_error("backward: loss is not on this tape");
    if (loss.numel() != 1)
      throw shape_error("backward: loss must be scalar, got " + loss.shape.str());
    grads_.assign(nodes_.size(), {});
    grads_[loss.node].assign(1, 1.f);
    for (int i = loss.node; i >= 0; --i) {
      if (grads_[i].empty() || !nodes_[i].backward) continue;
      nodes_[i].backward(*this);
    }
  }

  // Gradient accumulator for a node, allocated on first touch.
  std::vector<float>& grad(int node) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(nodes_[node].shape.numel(), 0.f);
    return g;
  }

  bool has_grad(int node) const {
    return node >= 0 && node < int(grads_.size()) && !grads_[node].empty();
  }

  // Sum of output element counts over all recorded operations; the measured
  // counterpart of the forward-outputs memory term in the cost model.
  int64_t stored_elements() const { return stored_; }

  int64_t conv_flops() const { return conv_flops_; }
  void add_conv_flops(int64_t f) { conv_flops_ += f; }

  size_t size() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    grads_.clear();
    stored_ = 0;
    conv_flops_ = 0;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<float>> grads_;
  int64_t stored_ = 0;
  int64_t conv_flops_ = 0;
};

// Sequence tensor [S, T, C, H, W]; the in-memory form of an STF1 file.
struct SeqTensor {
  uint32_t s = 0, t = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  int64_t numel() const { return int64_t(s) * t * c * h * w; }

  float* frame(uint32_t si, uint32_t ti) {
    return data.data() + ((int64_t(si) * t + ti) * c) * h * w;
  }
  const float* frame(uint32_t si, uint32_t ti) const {
    return data.data() + ((int64_t(si) * t + ti) * c) * h * w;
  }
  int64_t frame_elems() const { return int64_t(c) * h * w; }
};

}  // namespace stp

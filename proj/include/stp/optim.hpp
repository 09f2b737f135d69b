#pragma once

#include "stp/tensor.hpp"

namespace stp {

// Trainable tensor with its gradient accumulator and Adam moment buffers.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<float> grad;
  std::vector<float> moment1, moment2;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad.assign(value.numel(), 0.f);
    moment1.assign(value.numel(), 0.f);
    moment2.assign(value.numel(), 0.f);
  }

  // Register the value as a tape leaf for the current forward pass.
  void attach(Tape& tape) { tape.leaf(value); }

  // Pull this pass's gradient off the tape (additively).
  void collect(Tape& tape) {
    if (value.node < 0 || !tape.has_grad(value.node)) return;
    const auto& g = tape.grad(value.node);
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.f); }
};

inline double grad_norm(const std::vector<Parameter*>& params) {
  double acc = 0.0;
  for (const Parameter* p : params)
    for (float g : p->grad) acc += double(g) * g;
  return std::sqrt(acc);
}

inline void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const float s = float(max_norm / norm);
  for (Parameter* p : params)
    for (float& g : p->grad) g *= s;
}

// Bias-corrected Adam. Gradients are zeroed after the update; a non-finite
// gradient aborts with the offending parameter's name.
inline void adam_step(const std::vector<Parameter*>& params, float lr,
                      std::pair<float, float> betas, float eps, int64_t t) {
  if (t < 1) throw config_error("adam_step: step index must be >= 1");
  const float b1 = betas.first, b2 = betas.second;
  const float c1 = 1.f - float(std::pow(double(b1), double(t)));
  const float c2 = 1.f - float(std::pow(double(b2), double(t)));
  for (Parameter* p : params) {
    float* v = p->value.ptr();
    for (size_t i = 0; i < p->grad.size(); ++i) {
      const float g = p->grad[i];
      if (!std::isfinite(g))
        throw numeric_error("non-finite gradient in parameter '" + p->name + "'");
      p->moment1[i] = b1 * p->moment1[i] + (1.f - b1) * g;
      p->moment2[i] = b2 * p->moment2[i] + (1.f - b2) * g * g;
      const float mhat = p->moment1[i] / c1;
      const float vhat = p->moment2[i] / c2;
      v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p->zero_grad();
  }
}

}  // namespace stp

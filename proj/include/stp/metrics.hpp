#pragma once

#include <iomanip>

#include "stp/ops.hpp"

namespace stp {

// Per-horizon-step values (averaged over samples) plus sequence aggregates.
// MSE/MAE/GDL follow the per-frame pixel-sum convention; PSNR and SSIM are
// per-frame means.
struct FrameMetrics {
  std::vector<double> mse, mae, ssim, psnr, gdl;
  double mse_mean = 0, mae_mean = 0, ssim_mean = 0, psnr_mean = 0, gdl_mean = 0;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size_t(size) * size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      w[size_t(y) * size + x] = std::exp(-d2 / (2 * sigma * sigma));
      sum += w[size_t(y) * size + x];
    }
  for (double& v : w) v /= sum;
  return w;
}

// SSIM over one channel plane: 11x11 Gaussian window (sigma 1.5), dynamic
// range 1, averaged over all fully interior window positions.
inline double ssim_plane(const float* a, const float* b, int h, int w) {
  constexpr int win = 11;
  constexpr double k1 = 0.01, k2 = 0.03, range = 1.0;
  constexpr double c1 = (k1 * range) * (k1 * range);
  constexpr double c2 = (k2 * range) * (k2 * range);
  if (h < win || w < win)
    throw data_error("ssim: frames must be at least 11x11");
  static const std::vector<double> g = gaussian_window(win, 1.5);

  double total = 0;
  int64_t count = 0;
  for (int y = 0; y + win <= h; ++y)
    for (int x = 0; x + win <= w; ++x) {
      double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
      for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
          const double gw = g[size_t(dy) * win + dx];
          const double va = a[size_t(y + dy) * w + x + dx];
          const double vb = b[size_t(y + dy) * w + x + dx];
          mu1 += gw * va;
          mu2 += gw * vb;
          m11 += gw * va * va;
          m22 += gw * vb * vb;
          m12 += gw * va * vb;
        }
      const double s1 = m11 - mu1 * mu1;
      const double s2 = m22 - mu2 * mu2;
      const double s12 = m12 - mu1 * mu2;
      total += ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) /
               ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2));
      ++count;
    }
  return total / double(count);
}

// Gradient difference: sum over both axes of | |grad truth| - |grad pred| |.
inline double gdl_plane(const float* pred, const float* truth, int h, int w) {
  double total = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 1; x < w; ++x) {
      const double gp = std::fabs(double(pred[size_t(y) * w + x]) - pred[size_t(y) * w + x - 1]);
      const double gt = std::fabs(double(truth[size_t(y) * w + x]) - truth[size_t(y) * w + x - 1]);
      total += std::fabs(gt - gp);
    }
  for (int y = 1; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gp = std::fabs(double(pred[size_t(y) * w + x]) - pred[size_t(y - 1) * w + x]);
      const double gt = std::fabs(double(truth[size_t(y) * w + x]) - truth[size_t(y - 1) * w + x]);
      total += std::fabs(gt - gp);
    }
  return total;
}

}  // namespace detail

inline FrameMetrics frame_metrics(const SeqTensor& pred, const SeqTensor& truth) {
  if (pred.s != truth.s || pred.t != truth.t || pred.c != truth.c ||
      pred.h != truth.h || pred.w != truth.w)
    throw shape_error("frame_metrics: prediction and truth shapes differ");
  const int S = int(pred.s), T = int(pred.t), C = int(pred.c), H = int(pred.h),
            W = int(pred.w);
  const int64_t plane = int64_t(H) * W;

  FrameMetrics fm;
  fm.mse.assign(T, 0);
  fm.mae.assign(T, 0);
  fm.ssim.assign(T, 0);
  fm.psnr.assign(T, 0);
  fm.gdl.assign(T, 0);

  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const float* p = pred.frame(s, t);
      const float* q = truth.frame(s, t);
      double sq = 0, ab = 0, ssim_v = 0, gdl_v = 0;
      for (int64_t i = 0; i < int64_t(C) * plane; ++i) {
        const double d = double(p[i]) - q[i];
        sq += d * d;
        ab += std::fabs(d);
      }
      for (int c = 0; c < C; ++c) {
        ssim_v += detail::ssim_plane(p + c * plane, q + c * plane, H, W);
        gdl_v += detail::gdl_plane(p + c * plane, q + c * plane, H, W);
      }
      ssim_v /= C;
      const double pix_mse = sq / (double(C) * plane);
      const double psnr_v =
          pix_mse <= 0 ? 100.0 : std::min(100.0, 10.0 * std::log10(1.0 / pix_mse));
      fm.mse[t] += sq;
      fm.mae[t] += ab;
      fm.ssim[t] += ssim_v;
      fm.psnr[t] += psnr_v;
      fm.gdl[t] += gdl_v;
    }
    fm.mse[t] /= S;
    fm.mae[t] /= S;
    fm.ssim[t] /= S;
    fm.psnr[t] /= S;
    fm.gdl[t] /= S;
  }
  for (int t = 0; t < T; ++t) {
    fm.mse_mean += fm.mse[t];
    fm.mae_mean += fm.mae[t];
    fm.ssim_mean += fm.ssim[t];
    fm.psnr_mean += fm.psnr[t];
    fm.gdl_mean += fm.gdl[t];
  }
  fm.mse_mean /= T;
  fm.mae_mean /= T;
  fm.ssim_mean /= T;
  fm.psnr_mean /= T;
  fm.gdl_mean /= T;
  return fm;
}

inline std::string render_metrics_csv(const FrameMetrics& fm) {
  std::ostringstream os;
  os << "horizon,mse,mae,ssim,psnr,gdl\n" << std::setprecision(10);
  for (size_t t = 0; t < fm.mse.size(); ++t)
    os << t + 1 << "," << fm.mse[t] << "," << fm.mae[t] << "," << fm.ssim[t] << ","
       << fm.psnr[t] << "," << fm.gdl[t] << "\n";
  os << "all," << fm.mse_mean << "," << fm.mae_mean << "," << fm.ssim_mean << ","
     << fm.psnr_mean << "," << fm.gdl_mean << "\n";
  return os.str();
}

// Step-function pixel weights keyed on the ground-truth value; heavier
// events get larger weights.
struct WeightMap {
  std::vector<double> bounds{2, 5, 10, 30};
  std::vector<double> weights{1, 2, 5, 10, 30};

  double at(double v) const {
    size_t i = 0;
    while (i < bounds.size() && v >= bounds[i]) ++i;
    return weights[i];
  }
  static WeightMap unit() { return WeightMap{{}, {1.0}}; }
};

struct SkillScores {
  std::vector<double> thresholds;
  std::vector<double> csi, hss;
  std::vector<uint8_t> csi_flagged, hss_flagged;  // zero-denominator cases
  double b_mse = 0, b_mae = 0;
};

inline SkillScores skill_scores(const SeqTensor& pred, const SeqTensor& truth,
                                const std::vector<double>& thresholds,
                                const WeightMap& wm = WeightMap{}) {
  if (pred.s != truth.s || pred.t != truth.t || pred.c != truth.c ||
      pred.h != truth.h || pred.w != truth.w)
    throw shape_error("skill_scores: prediction and truth shapes differ");
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] <= thresholds[i - 1])
      throw config_error("skill_scores: thresholds must be ascending");
  if (wm.weights.size() != wm.bounds.size() + 1)
    throw config_error("weight map: needs one more weight than bounds");

  SkillScores out;
  out.thresholds = thresholds;
  const size_t nt = thresholds.size();
  std::vector<uint64_t> tp(nt, 0), fp(nt, 0), fn(nt, 0), tn(nt, 0);

  const int64_t frame = pred.frame_elems();
  double bse = 0, bae = 0;
  for (uint32_t s = 0; s < pred.s; ++s)
    for (uint32_t t = 0; t < pred.t; ++t) {
      const float* p = pred.frame(s, t);
      const float* q = truth.frame(s, t);
      double fse = 0, fae = 0;
      for (int64_t i = 0; i < frame; ++i) {
        const double pv = p[i], qv = q[i];
        for (size_t k = 0; k < nt; ++k) {
          const bool hp = pv >= thresholds[k], hq = qv >= thresholds[k];
          if (hp && hq) ++tp[k];
          else if (hp) ++fp[k];
          else if (hq) ++fn[k];
          else ++tn[k];
        }
        const double w = wm.at(qv), d = pv - qv;
        fse += w * d * d;
        fae += w * std::fabs(d);
      }
      bse += fse;
      bae += fae;
    }
  const double frames = double(pred.s) * pred.t;
  out.b_mse = bse / frames;
  out.b_mae = bae / frames;

  out.csi.resize(nt);
  out.hss.resize(nt);
  out.csi_flagged.assign(nt, 0);
  out.hss_flagged.assign(nt, 0);
  for (size_t k = 0; k < nt; ++k) {
    const double TP = double(tp[k]), FP = double(fp[k]), FN = double(fn[k]),
                 TN = double(tn[k]);
    const double csi_den = TP + FN + FP;
    if (csi_den == 0) { out.csi[k] = 0; out.csi_flagged[k] = 1; }
    else out.csi[k] = TP / csi_den;
    const double hss_den = (TP + FN) * (FN + TN) + (TP + FP) * (FP + TN);
    if (hss_den == 0) { out.hss[k] = 0; out.hss_flagged[k] = 1; }
    else out.hss[k] = 2 * (TP * TN - FN * FP) / hss_den;
  }
  return out;
}

inline std::string render_skill_csv(const SkillScores& s) {
  std::ostringstream os;
  os << "threshold,csi,hss,flagged\n" << std::setprecision(10);
  for (size_t k = 0; k < s.thresholds.size(); ++k)
    os << s.thresholds[k] << "," << s.csi[k] << "," << s.hss[k] << ","
       << int(s.csi_flagged[k] | s.hss_flagged[k]) << "\n";
  os << "b_mse," << s.b_mse << ",,\nb_mae," << s.b_mae << ",,\n";
  return os.str();
}

enum class LossKind { l1, l2, l1l2 };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::l1: return "l1";
    case LossKind::l2: return "l2";
    default: return "l1+l2";
  }
}

inline LossKind loss_kind_from(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "l2") return LossKind::l2;
  if (s == "l1+l2" || s == "l1l2") return LossKind::l1l2;
  throw config_error("unknown loss kind '" + s + "'");
}

// Differentiable training loss over the forecast frames: per-element means,
// averaged across frames.
inline Tensor training_loss(Tape* tape, const std::vector<Tensor>& pred,
                            const std::vector<Tensor>& truth, LossKind kind) {
  if (pred.size() != truth.size() || pred.empty())
    throw shape_error("training_loss: prediction/truth frame counts differ");
  Tensor total;
  bool first = true;
  for (size_t t = 0; t < pred.size(); ++t) {
    Tensor diff = sub(tape, pred[t], truth[t]);
    Tensor frame_loss;
    if (kind == LossKind::l1) {
      frame_loss = mean_all(tape, abs(tape, diff));
    } else if (kind == LossKind::l2) {
      frame_loss = mean_all(tape, hadamard(tape, diff, diff));
    } else {
      frame_loss = add(tape, mean_all(tape, abs(tape, diff)),
                       mean_all(tape, hadamard(tape, diff, diff)));
    }
    total = first ? frame_loss : add(tape, total, frame_loss);
    first = false;
  }
  return scale(tape, total, 1.f / float(pred.size()));
}

}  // namespace stp

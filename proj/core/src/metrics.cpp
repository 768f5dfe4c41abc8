#include "snapflow/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace snapflow {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01; // (K1 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> w = [] {
    std::vector<double> g(kWindow * kWindow);
    const double mid = (kWindow - 1) / 2.0;
    double sum = 0.0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        const double dx = x - mid, dy = y - mid;
        g[static_cast<size_t>(y) * kWindow + x] =
            std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        sum += g[static_cast<size_t>(y) * kWindow + x];
      }
    for (double& v : g) v /= sum;
    return g;
  }();
  return w;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "psnr: shape mismatch ", a.shape_str(), " vs ",
        b.shape_str());
  double sq = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.numel());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "ssim: shape mismatch ", a.shape_str(), " vs ",
        b.shape_str());
  check(a.rank() == 3, "ssim: expected (C,H,W), got ", a.shape_str());
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  check(h >= kWindow && w >= kWindow, "ssim: image ", a.shape_str(),
        " is smaller than the ", kWindow, "x", kWindow, " window");
  const std::vector<double>& g = gaussian_window();
  const int64_t hw = static_cast<int64_t>(h) * w;

  double channel_sum = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    const float* pa = a.data() + ch * hw;
    const float* pb = b.data() + ch * hw;
    double acc = 0.0;
    int64_t windows = 0;
    for (int y = 0; y + kWindow <= h; ++y)
      for (int x = 0; x + kWindow <= w; ++x) {
        double ma = 0.0, mb = 0.0, va = 0.0, vb = 0.0, cov = 0.0;
        for (int wy = 0; wy < kWindow; ++wy)
          for (int wx = 0; wx < kWindow; ++wx) {
            const double weight = g[static_cast<size_t>(wy) * kWindow + wx];
            const double sa = pa[static_cast<int64_t>(y + wy) * w + (x + wx)];
            const double sb = pb[static_cast<int64_t>(y + wy) * w + (x + wx)];
            ma += weight * sa;
            mb += weight * sb;
            va += weight * sa * sa;
            vb += weight * sb * sb;
            cov += weight * sa * sb;
          }
        va -= ma * ma;
        vb -= mb * mb;
        cov -= ma * mb;
        const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
        const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
        acc += num / den;
        ++windows;
      }
    channel_sum += acc / static_cast<double>(windows);
  }
  return channel_sum / c;
}

SequenceScore score_sequence(const std::vector<Tensor>& candidate,
                             const std::vector<Tensor>& reference) {
  check(!reference.empty(), "score_sequence: empty reference");
  check(candidate.size() == reference.size(), "score_sequence: ",
        candidate.size(), " candidate frames vs ", reference.size(),
        " reference frames");
  SequenceScore score;
  for (size_t t = 0; t < reference.size(); ++t) {
    score.psnr += psnr(candidate[t], reference[t]);
    score.ssim += ssim(candidate[t], reference[t]);
  }
  score.psnr /= static_cast<double>(reference.size());
  score.ssim /= static_cast<double>(reference.size());
  return score;
}

SequenceScore best_of_k(const std::vector<std::vector<Tensor>>& candidates,
                        const std::vector<Tensor>& reference) {
  check(!candidates.empty(), "best_of_k: no candidates");
  SequenceScore best;
  best.psnr = -1.0;
  best.ssim = -2.0;
  for (const auto& candidate : candidates) {
    const SequenceScore s = score_sequence(candidate, reference);
    best.psnr = std::max(best.psnr, s.psnr);
    best.ssim = std::max(best.ssim, s.ssim);
  }
  return best;
}

}  // namespace snapflow

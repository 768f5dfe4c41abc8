#include "snapflow/occlusion.hpp"

#include <algorithm>
#include <cmath>

#include "snapflow/warp.hpp"

namespace snapflow {

namespace {

void check_flow(const Tensor& f, const char* what) {
  check(f.rank() == 3 && f.dim(0) == 2, what, ": expected a (2,H,W) flow field, got ",
        f.shape_str());
}

// One direction's mask: visible where the round trip through the other flow
// comes back short of the Eq-style threshold.
Tensor one_sided_mask(const Tensor& primary, const Tensor& secondary, float alpha,
                      float beta) {
  const int h = primary.dim(1), w = primary.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  const Tensor sampled = bilinear_sample(secondary, primary);
  Tensor mask({1, h, w});
  for (int64_t i = 0; i < hw; ++i) {
    const float du = primary[i] + sampled[i];
    const float dv = primary[hw + i] + sampled[hw + i];
    const float delta = std::fabs(du) + std::fabs(dv);
    const float norm_p = std::fabs(primary[i]) + std::fabs(primary[hw + i]);
    const float norm_s = std::fabs(sampled[i]) + std::fabs(sampled[hw + i]);
    const float threshold = std::max(alpha, beta * (norm_p + norm_s));
    mask[i] = delta < threshold ? 1.0f : 0.0f;
  }
  return mask;
}

}  // namespace

Tensor cycle_residual(const Tensor& primary, const Tensor& secondary) {
  check_flow(primary, "cycle_residual");
  check_flow(secondary, "cycle_residual");
  check(primary.same_shape(secondary), "cycle_residual: size mismatch ",
        primary.shape_str(), " vs ", secondary.shape_str());
  const Tensor sampled = bilinear_sample(secondary, primary);
  Tensor out(primary.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = primary[i] + sampled[i];
  return out;
}

MaskPair visibility_masks(const Tensor& fwd, const Tensor& bwd, float alpha,
                          float beta) {
  check_flow(fwd, "visibility_masks");
  check_flow(bwd, "visibility_masks");
  check(fwd.same_shape(bwd), "visibility_masks: size mismatch ", fwd.shape_str(),
        " vs ", bwd.shape_str());
  check(alpha > 0.0f, "visibility_masks: alpha must be positive");
  check(beta >= 0.0f, "visibility_masks: beta must be non-negative");
  MaskPair out;
  out.reference = one_sided_mask(fwd, bwd, alpha, beta);
  out.target = one_sided_mask(bwd, fwd, alpha, beta);
  return out;
}

}  // namespace snapflow

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snapflow/graph.hpp"

namespace snapflow {

struct LossWeights {
  float bi_vc = 1.0f;
  float cc = 0.05f;
  float pp = 1.0f;
  float tv = 1e-3f;
  float pp_feature = 0.05f;  // feature-term weight inside the perceptual loss
};

// Per-step loss breakdown. total is the minimized quantity:
// kl + w.bi_vc*bi_vc + w.cc*cc + w.pp*pp + w.tv*tv (single-sample objective).
struct LossReport {
  float total = 0, kl = 0, bi_vc = 0, cc = 0, pp = 0, tv = 0;
  LossWeights weights;

  std::string log_line(int64_t step) const;
};

// Fixed random-weight conv stack used as the perceptual feature extractor:
// channels 16/32/64/128/128, 3x3 kernels, stride 2 between stages, leaky
// ReLU. The weights are seeded once and never trained, so the distance is
// stable across calls and runs.
class FeaturePyramid {
 public:
  static constexpr uint64_t kDefaultSeed = 0x70797261u;  // arbitrary constant

  explicit FeaturePyramid(uint64_t seed = kDefaultSeed);

  // x: (N,3,H,W). Returns the 5 per-stage feature nodes, strides 1..16.
  std::vector<NodeId> operator()(Graph& g, NodeId x) const;

  const ParamStore& weights() const { return weights_; }

 private:
  ParamStore weights_;
};

// All loss builders append to the tape and return scalar nodes. Masks enter
// as plain tensors (visibility is a hard threshold and carries no gradient).

// Eq-style cycle consistency: per t, masked L1 of fwd + sample(bwd, fwd) on
// the reference grid plus the mirrored term on the target grid; raw sum over
// pixels and t, divided by batch size. fwd/bwd: T nodes of (N,2,H,W); masks:
// T tensors of (N,1,H,W).
NodeId loss_cycle_consistency(Graph& g, const std::vector<NodeId>& fwd,
                              const std::vector<NodeId>& bwd,
                              const std::vector<Tensor>& mask_ref,
                              const std::vector<Tensor>& mask_tgt);

// Bi-directional photometric consistency: per t, masked L1 between I0 and
// the fwd-warped frame t (reference grid) plus between frame t and the
// bwd-warped I0 (target grid); raw sum, divided by batch size.
// i0: (N,3,H,W); frames: T nodes (N,3,H,W).
NodeId loss_bidirectional_photometric(Graph& g, NodeId i0,
                                      const std::vector<NodeId>& frames,
                                      const std::vector<NodeId>& fwd,
                                      const std::vector<NodeId>& bwd,
                                      const std::vector<Tensor>& mask_ref,
                                      const std::vector<Tensor>& mask_tgt);

// Per-element MSE plus weighted per-element MSE of the 5 pyramid features.
NodeId loss_perceptual(Graph& g, NodeId pred, NodeId target,
                       const FeaturePyramid& pyramid, float feature_weight);

// 0.5 * sum_d(mu^2 + exp(log_var) - 1 - log_var), averaged over the batch.
// mu, log_var: (N,D).
NodeId kl_divergence_std_normal(Graph& g, NodeId mu, NodeId log_var);

// L1 of forward spatial differences, mean per defined difference.
// x: (N,C,H,W).
NodeId tv_l1(Graph& g, NodeId x);

struct ObjectiveParts {
  NodeId kl;
  // one entry per Monte Carlo sample of z (S >= 1)
  std::vector<NodeId> bi_vc, cc, pp;
  NodeId tv;
};

// total = kl + (1/S) * sum_s(w.bi_vc*bi_vc_s + w.cc*cc_s + w.pp*pp_s) + w.tv*tv.
NodeId total_objective(Graph& g, const ObjectiveParts& parts, const LossWeights& w);

// Reads component values off the tape into a report (S averages included).
// Must run before backward(), which releases interior node values.
LossReport make_loss_report(const Graph& g, const ObjectiveParts& parts,
                            NodeId total, const LossWeights& w);

}  // namespace snapflow

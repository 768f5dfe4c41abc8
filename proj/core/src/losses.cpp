#include "snapflow/losses.hpp"

#include <cstdio>

#include "snapflow/nn.hpp"

namespace snapflow {

namespace {

// Repeats a single-channel mask across `channels` and wraps it as a constant
// node, so masked terms contribute no mask gradient.
NodeId mask_constant(Graph& g, const Tensor& mask, int channels) {
  check(mask.rank() == 4 && mask.dim(1) == 1, "mask must be (N,1,H,W), got ",
        mask.shape_str());
  const int n = mask.dim(0), h = mask.dim(2), w = mask.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor wide({n, channels, h, w});
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < channels; ++c)
      for (int64_t i = 0; i < hw; ++i)
        wide[(static_cast<int64_t>(s) * channels + c) * hw + i] = mask[s * hw + i];
  return g.constant(std::move(wide));
}

int batch_of(const Graph& g, NodeId id) { return g.value(id).dim(0); }

}  // namespace

std::string LossReport::log_line(int64_t step) const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%lld total=%.6g kl=%.6g bi_vc=%.6g cc=%.6g pp=%.6g tv=%.6g",
                static_cast<long long>(step), static_cast<double>(total),
                static_cast<double>(kl), static_cast<double>(bi_vc),
                static_cast<double>(cc), static_cast<double>(pp),
                static_cast<double>(tv));
  return std::string(buf);
}

FeaturePyramid::FeaturePyramid(uint64_t seed) {
  Rng rng(seed);
  const int channels[] = {16, 32, 64, 128, 128};
  int ci = 3;
  for (int k = 0; k < 5; ++k) {
    const int co = channels[k];
    Tensor w({co, ci, 3, 3});
    nn::init_he_normal(w, static_cast<int64_t>(ci) * 9, rng);
    weights_.add("stage" + std::to_string(k) + ".w", std::move(w),
                 /*trainable=*/false);
    ci = co;
  }
}

std::vector<NodeId> FeaturePyramid::operator()(Graph& g, NodeId x) const {
  check(g.value(x).rank() == 4 && g.value(x).dim(1) == 3,
        "feature pyramid expects (N,3,H,W), got ", g.value(x).shape_str());
  std::vector<NodeId> features;
  NodeId cur = x;
  for (int k = 0; k < 5; ++k) {
    const NodeId w = g.param(weights_, "stage" + std::to_string(k) + ".w");
    const int stride = k == 0 ? 1 : 2;
    cur = g.leaky_relu(g.convolve(cur, w, -1, {stride, stride}, {1, 1}), 0.2f);
    features.push_back(cur);
  }
  return features;
}

NodeId loss_cycle_consistency(Graph& g, const std::vector<NodeId>& fwd,
                              const std::vector<NodeId>& bwd,
                              const std::vector<Tensor>& mask_ref,
                              const std::vector<Tensor>& mask_tgt) {
  const size_t t_count = fwd.size();
  check(t_count > 0 && bwd.size() == t_count && mask_ref.size() == t_count &&
            mask_tgt.size() == t_count,
        "loss_cycle_consistency: per-frame collections must share length");
  NodeId acc = -1;
  for (size_t t = 0; t < t_count; ++t) {
    const NodeId res_ref = g.add(fwd[t], g.warp_bilinear(bwd[t], fwd[t]));
    const NodeId res_tgt = g.add(bwd[t], g.warp_bilinear(fwd[t], bwd[t]));
    const NodeId term_ref =
        g.sum(g.mul(mask_constant(g, mask_ref[t], 2), g.abs(res_ref)));
    const NodeId term_tgt =
        g.sum(g.mul(mask_constant(g, mask_tgt[t], 2), g.abs(res_tgt)));
    const NodeId both = g.add(term_ref, term_tgt);
    acc = acc < 0 ? both : g.add(acc, both);
  }
  return g.scale(acc, 1.0f / static_cast<float>(batch_of(g, fwd[0])));
}

NodeId loss_bidirectional_photometric(Graph& g, NodeId i0,
                                      const std::vector<NodeId>& frames,
                                      const std::vector<NodeId>& fwd,
                                      const std::vector<NodeId>& bwd,
                                      const std::vector<Tensor>& mask_ref,
                                      const std::vector<Tensor>& mask_tgt) {
  const size_t t_count = frames.size();
  check(t_count > 0 && fwd.size() == t_count && bwd.size() == t_count &&
            mask_ref.size() == t_count && mask_tgt.size() == t_count,
        "loss_bidirectional_photometric: per-frame collections must share length");
  const int channels = g.value(i0).dim(1);
  NodeId acc = -1;
  for (size_t t = 0; t < t_count; ++t) {
    const NodeId back_to_ref = g.warp_bilinear(frames[t], fwd[t]);
    const NodeId to_target = g.warp_bilinear(i0, bwd[t]);
    const NodeId term_ref = g.sum(g.mul(mask_constant(g, mask_ref[t], channels),
                                        g.abs(g.sub(i0, back_to_ref))));
    const NodeId term_tgt = g.sum(g.mul(mask_constant(g, mask_tgt[t], channels),
                                        g.abs(g.sub(frames[t], to_target))));
    const NodeId both = g.add(term_ref, term_tgt);
    acc = acc < 0 ? both : g.add(acc, both);
  }
  return g.scale(acc, 1.0f / static_cast<float>(batch_of(g, i0)));
}

NodeId loss_perceptual(Graph& g, NodeId pred, NodeId target,
                       const FeaturePyramid& pyramid, float feature_weight) {
  check(g.value(pred).same_shape(g.value(target)),
        "loss_perceptual: shape mismatch ", g.value(pred).shape_str(), " vs ",
        g.value(target).shape_str());
  NodeId total = g.mean(g.square(g.sub(pred, target)));
  const std::vector<NodeId> fp = pyramid(g, pred);
  const std::vector<NodeId> ft = pyramid(g, target);
  for (size_t k = 0; k < fp.size(); ++k) {
    total = g.add(total,
                  g.scale(g.mean(g.square(g.sub(fp[k], ft[k]))), feature_weight));
  }
  return total;
}

NodeId kl_divergence_std_normal(Graph& g, NodeId mu, NodeId log_var) {
  check(g.value(mu).same_shape(g.value(log_var)), "kl divergence: mu ",
        g.value(mu).shape_str(), " and log_var ", g.value(log_var).shape_str(),
        " must match");
  check(g.value(mu).rank() == 2, "kl divergence: expected (N,D), got ",
        g.value(mu).shape_str());
  // copy before building; node creation can move the graph's value storage
  const float half_over_batch = 0.5f / static_cast<float>(g.value(mu).dim(0));
  // mu^2 + exp(log_var) - 1 - log_var, summed, halved, batch-averaged
  const NodeId inner =
      g.sub(g.add_scalar(g.add(g.square(mu), g.exp(log_var)), -1.0f), log_var);
  return g.scale(g.sum(inner), half_over_batch);
}

NodeId tv_l1(Graph& g, NodeId x) {
  const Tensor& tx = g.value(x);
  check(tx.rank() == 4, "tv_l1: expected (N,C,H,W), got ", tx.shape_str());
  const int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  check(h >= 2 || w >= 2, "tv_l1: needs at least one spatial difference");
  NodeId acc = -1;
  int64_t count = 0;
  if (h >= 2) {
    const NodeId dh = g.sub(g.narrow(x, 2, 1, h - 1), g.narrow(x, 2, 0, h - 1));
    acc = g.sum(g.abs(dh));
    count += static_cast<int64_t>(n) * c * (h - 1) * w;
  }
  if (w >= 2) {
    const NodeId dw = g.sub(g.narrow(x, 3, 1, w - 1), g.narrow(x, 3, 0, w - 1));
    const NodeId s = g.sum(g.abs(dw));
    acc = acc < 0 ? s : g.add(acc, s);
    count += static_cast<int64_t>(n) * c * h * (w - 1);
  }
  return g.scale(acc, 1.0f / static_cast<float>(count));
}

NodeId total_objective(Graph& g, const ObjectiveParts& parts, const LossWeights& w) {
  const size_t s_count = parts.bi_vc.size();
  check(s_count >= 1, "total_objective: need at least one z sample, got 0");
  check(parts.cc.size() == s_count && parts.pp.size() == s_count,
        "total_objective: per-sample loss lists must share length");
  NodeId recon = -1;
  for (size_t s = 0; s < s_count; ++s) {
    const NodeId one = g.add(g.add(g.scale(parts.bi_vc[s], w.bi_vc),
                                   g.scale(parts.cc[s], w.cc)),
                             g.scale(parts.pp[s], w.pp));
    recon = recon < 0 ? one : g.add(recon, one);
  }
  recon = g.scale(recon, 1.0f / static_cast<float>(s_count));
  return g.add(g.add(parts.kl, recon), g.scale(parts.tv, w.tv));
}

LossReport make_loss_report(const Graph& g, const ObjectiveParts& parts,
                            NodeId total, const LossWeights& w) {
  LossReport r;
  r.weights = w;
  r.total = g.value(total)[0];
  r.kl = g.value(parts.kl)[0];
  const float inv_s = 1.0f / static_cast<float>(parts.bi_vc.size());
  for (size_t s = 0; s < parts.bi_vc.size(); ++s) {
    r.bi_vc += g.value(parts.bi_vc[s])[0] * inv_s;
    r.cc += g.value(parts.cc[s])[0] * inv_s;
    r.pp += g.value(parts.pp[s])[0] * inv_s;
  }
  r.tv = g.value(parts.tv)[0];
  return r;
}

}  // namespace snapflow

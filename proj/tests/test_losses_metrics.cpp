#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"

#include "snapflow/losses.hpp"
#include "snapflow/metrics.hpp"
#include "snapflow/rng.hpp"

using namespace snapflow;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = 0.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Tensor constant_flow_batch(int n, int h, int w, float u, float v) {
  Tensor f({n, 2, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int s = 0; s < n; ++s)
    for (int64_t i = 0; i < hw; ++i) {
      f[s * 2 * hw + i] = u;
      f[s * 2 * hw + hw + i] = v;
    }
  return f;
}

float scalar_value(Graph& g, NodeId n) { return g.value(n)[0]; }

}  // namespace

TEST_CASE("kl divergence closed-form values") {
  {
    Graph g;
    NodeId mu = g.leaf(Tensor({2, 3}));
    NodeId lv = g.leaf(Tensor({2, 3}));
    CHECK(std::abs(scalar_value(g, kl_divergence_std_normal(g, mu, lv))) <= 1e-7f);
  }
  {
    Graph g;
    NodeId mu = g.leaf(Tensor::full({1, 1}, 1.0f));
    NodeId lv = g.leaf(Tensor({1, 1}));
    CHECK(scalar_value(g, kl_divergence_std_normal(g, mu, lv)) ==
          doctest::Approx(0.5).epsilon(1e-6));
  }
  {
    Graph g;
    NodeId mu = g.leaf(Tensor({1, 1}));
    NodeId lv = g.leaf(Tensor::full({1, 1}, 1.0f));
    CHECK(scalar_value(g, kl_divergence_std_normal(g, mu, lv)) ==
          doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-6));
  }
}

TEST_CASE("kl divergence averages over the batch") {
  Rng rng(31);
  Tensor mu1 = random_tensor({1, 4}, rng, -1.0, 1.0);
  Tensor lv1 = random_tensor({1, 4}, rng, -0.5, 0.5);
  Tensor mu2({2, 4});
  Tensor lv2({2, 4});
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 4; ++i) {
      mu2[s * 4 + i] = mu1[i];
      lv2[s * 4 + i] = lv1[i];
    }
  Graph g1, g2;
  const float single =
      scalar_value(g1, kl_divergence_std_normal(g1, g1.leaf(mu1), g1.leaf(lv1)));
  const float doubled =
      scalar_value(g2, kl_divergence_std_normal(g2, g2.leaf(mu2), g2.leaf(lv2)));
  CHECK(doubled == doctest::Approx(single).epsilon(1e-6));
}

TEST_CASE("tv penalty is the mean absolute forward difference") {
  {
    Graph g;
    NodeId x = g.leaf(Tensor({1, 1, 1, 2}, {0.0f, 1.0f}));
    CHECK(scalar_value(g, tv_l1(g, x)) == 1.0f);
  }
  {
    Graph g;
    NodeId x = g.leaf(Tensor({1, 1, 2, 2}, {0.0f, 1.0f, 1.0f, 0.0f}));
    CHECK(scalar_value(g, tv_l1(g, x)) == 1.0f);
  }
  {
    Graph g;
    NodeId x = g.leaf(Tensor::full({2, 3, 5, 5}, 0.7f));
    CHECK(scalar_value(g, tv_l1(g, x)) == 0.0f);
  }
}

TEST_CASE("cycle loss vanishes for uniform inverse flow pairs") {
  const int n = 2, h = 8, w = 8;
  Graph g;
  NodeId fwd = g.leaf(constant_flow_batch(n, h, w, 1.7f, -0.6f));
  NodeId bwd = g.leaf(constant_flow_batch(n, h, w, -1.7f, 0.6f));
  std::vector<Tensor> ones = {Tensor::full({n, 1, h, w}, 1.0f)};
  const float loss =
      scalar_value(g, loss_cycle_consistency(g, {fwd}, {bwd}, ones, ones));
  CHECK(std::abs(loss) <= 1e-7f);
}

TEST_CASE("cycle loss is positive when the flows disagree") {
  const int n = 1, h = 8, w = 8;
  Graph g;
  NodeId fwd = g.leaf(constant_flow_batch(n, h, w, 2.0f, 0.0f));
  NodeId bwd = g.leaf(constant_flow_batch(n, h, w, 0.0f, 0.0f));
  std::vector<Tensor> ones = {Tensor::full({n, 1, h, w}, 1.0f)};
  CHECK(scalar_value(g, loss_cycle_consistency(g, {fwd}, {bwd}, ones, ones)) > 1.0f);

  Graph g2;
  NodeId fwd2 = g2.leaf(constant_flow_batch(n, h, w, 2.0f, 0.0f));
  NodeId bwd2 = g2.leaf(constant_flow_batch(n, h, w, 0.0f, 0.0f));
  std::vector<Tensor> zeros = {Tensor({n, 1, h, w})};
  CHECK(scalar_value(g2, loss_cycle_consistency(g2, {fwd2}, {bwd2}, zeros, zeros)) ==
        0.0f);
}

TEST_CASE("photometric loss vanishes on a static scene with zero flow") {
  Rng rng(32);
  const int n = 2, h = 8, w = 8;
  Tensor image = random_tensor({n, 3, h, w}, rng);
  Graph g;
  NodeId i0 = g.leaf(image);
  NodeId frame = g.leaf(image);
  NodeId fwd = g.leaf(Tensor({n, 2, h, w}));
  NodeId bwd = g.leaf(Tensor({n, 2, h, w}));
  std::vector<Tensor> ones = {Tensor::full({n, 1, h, w}, 1.0f)};
  const float loss = scalar_value(
      g, loss_bidirectional_photometric(g, i0, {frame}, {fwd}, {bwd}, ones, ones));
  CHECK(std::abs(loss) <= 1e-7f);
}

TEST_CASE("photometric loss sees brightness mismatches") {
  const int n = 1, h = 8, w = 8;
  Graph g;
  NodeId i0 = g.leaf(Tensor::full({n, 3, h, w}, 0.8f));
  NodeId frame = g.leaf(Tensor::full({n, 3, h, w}, 0.3f));
  NodeId fwd = g.leaf(Tensor({n, 2, h, w}));
  NodeId bwd = g.leaf(Tensor({n, 2, h, w}));
  std::vector<Tensor> ones = {Tensor::full({n, 1, h, w}, 1.0f)};
  const float loss = scalar_value(
      g, loss_bidirectional_photometric(g, i0, {frame}, {fwd}, {bwd}, ones, ones));
  // |0.8 - 0.3| summed over 3 channels, 64 pixels, both grids
  CHECK(loss == doctest::Approx(0.5 * 3 * 64 * 2).epsilon(1e-5));
}

TEST_CASE("feature pyramid is deterministic and strided") {
  Rng rng(33);
  Tensor image = random_tensor({1, 3, 32, 32}, rng);
  FeaturePyramid p1, p2;

  Graph g1;
  auto f1 = p1(g1, g1.leaf(image));
  Graph g2;
  auto f2 = p2(g2, g2.leaf(image));
  REQUIRE(f1.size() == 5);
  const int want_c[5] = {16, 32, 64, 128, 128};
  for (size_t i = 0; i < 5; ++i) {
    const Tensor& a = g1.value(f1[i]);
    const Tensor& b = g2.value(f2[i]);
    CHECK(a.dim(1) == want_c[i]);
    CHECK(a.dim(2) == 32 >> i);
    REQUIRE(a.same_shape(b));
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()) == 0);
  }
}

TEST_CASE("perceptual loss is zero for identical frames and grows with error") {
  Rng rng(34);
  Tensor image = random_tensor({1, 3, 32, 32}, rng);
  FeaturePyramid pyramid;
  {
    Graph g;
    NodeId a = g.leaf(image);
    NodeId b = g.leaf(image);
    CHECK(std::abs(scalar_value(g, loss_perceptual(g, a, b, pyramid, 0.05f))) <=
          1e-7f);
  }
  {
    Graph g;
    Tensor noisy = image;
    for (int64_t i = 0; i < noisy.numel(); ++i)
      noisy[i] += static_cast<float>(rng.uniform(-0.2, 0.2));
    NodeId a = g.leaf(noisy);
    NodeId b = g.leaf(image);
    CHECK(scalar_value(g, loss_perceptual(g, a, b, pyramid, 0.05f)) > 1e-4f);
  }
}

TEST_CASE("total objective blends the parts with their weights") {
  Graph g;
  ObjectiveParts parts;
  parts.kl = g.leaf(Tensor::scalar(1.0f));
  parts.bi_vc = {g.leaf(Tensor::scalar(0.5f))};
  parts.cc = {g.leaf(Tensor::scalar(2.0f))};
  parts.pp = {g.leaf(Tensor::scalar(0.1f))};
  parts.tv = g.leaf(Tensor::scalar(100.0f));
  LossWeights w;  // 1, 0.05, 1, 1e-3
  NodeId total = total_objective(g, parts, w);
  CHECK(scalar_value(g, total) == doctest::Approx(1.8f).epsilon(1e-6));

  LossReport report = make_loss_report(g, parts, total, w);
  CHECK(report.total == doctest::Approx(1.8f).epsilon(1e-6));
  CHECK(report.kl == 1.0f);
  CHECK(report.bi_vc == 0.5f);
  CHECK(report.cc == 2.0f);
  CHECK(report.pp == doctest::Approx(0.1f));
  CHECK(report.tv == 100.0f);
  const std::string line = report.log_line(42);
  CHECK(line.find("step=42") != std::string::npos);
  CHECK(line.find("total=") != std::string::npos);
}

TEST_CASE("multiple posterior samples average into the objective") {
  Graph g;
  ObjectiveParts parts;
  parts.kl = g.leaf(Tensor::scalar(0.0f));
  parts.bi_vc = {g.leaf(Tensor::scalar(1.0f)), g.leaf(Tensor::scalar(3.0f))};
  parts.cc = {g.leaf(Tensor::scalar(0.0f)), g.leaf(Tensor::scalar(0.0f))};
  parts.pp = {g.leaf(Tensor::scalar(0.0f)), g.leaf(Tensor::scalar(0.0f))};
  parts.tv = g.leaf(Tensor::scalar(0.0f));
  LossWeights w;
  NodeId total = total_objective(g, parts, w);
  CHECK(scalar_value(g, total) == doctest::Approx(2.0f).epsilon(1e-6));
  LossReport report = make_loss_report(g, parts, total, w);
  CHECK(report.bi_vc == doctest::Approx(2.0f));
}

TEST_CASE("objective differentiates end to end") {
  Rng rng(35);
  const int n = 1, h = 8, w = 8;
  Graph g;
  NodeId fwd = g.leaf(random_tensor({n, 2, h, w}, rng, -1.0, 1.0));
  NodeId bwd = g.leaf(random_tensor({n, 2, h, w}, rng, -1.0, 1.0));
  std::vector<Tensor> ones = {Tensor::full({n, 1, h, w}, 1.0f)};
  NodeId loss = loss_cycle_consistency(g, {fwd}, {bwd}, ones, ones);
  g.backward(loss);
  CHECK(g.grad(fwd).all_finite());
  CHECK(g.grad(bwd).all_finite());
}

TEST_CASE("psnr reference values") {
  Rng rng(36);
  Tensor a = random_tensor({3, 16, 16}, rng);
  CHECK(psnr(a, a) == 99.0);

  Tensor zeros({1, 16, 16});
  Tensor tenth = Tensor::full({1, 16, 16}, 0.1f);
  CHECK(std::abs(psnr(zeros, tenth) - 20.0) < 1e-6);

  Tensor other = random_tensor({3, 16, 16}, rng);
  CHECK(psnr(a, other) == psnr(other, a));
  CHECK_THROWS(psnr(a, zeros));
}

TEST_CASE("ssim reference values") {
  Rng rng(37);
  Tensor a = random_tensor({3, 16, 16}, rng);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-6);

  Tensor noisy = a;
  for (int64_t i = 0; i < noisy.numel(); ++i)
    noisy[i] = std::min(1.0f, std::max(0.0f, noisy[i] + static_cast<float>(
                                                rng.uniform(-0.3, 0.3))));
  CHECK(ssim(a, noisy) < 0.99);
  CHECK(ssim(a, noisy) > -1.0);

  Tensor small({1, 8, 8});
  CHECK_THROWS(ssim(small, small));
}

TEST_CASE("sequence scores average frames, best-of-k maximizes per metric") {
  Rng rng(38);
  std::vector<Tensor> truth;
  for (int t = 0; t < 3; ++t) truth.push_back(random_tensor({3, 16, 16}, rng));

  std::vector<std::vector<Tensor>> candidates;
  for (int k = 0; k < 4; ++k) {
    std::vector<Tensor> cand;
    for (const Tensor& frame : truth) {
      Tensor c = frame;
      for (int64_t i = 0; i < c.numel(); ++i)
        c[i] += static_cast<float>(rng.uniform(-0.1 * (k + 1), 0.1 * (k + 1)));
      cand.push_back(std::move(c));
    }
    candidates.push_back(std::move(cand));
  }

  double max_psnr = -1e9, max_ssim = -1e9;
  for (const auto& cand : candidates) {
    const SequenceScore s = score_sequence(cand, truth);
    max_psnr = std::max(max_psnr, s.psnr);
    max_ssim = std::max(max_ssim, s.ssim);
  }
  const SequenceScore best = best_of_k(candidates, truth);
  CHECK(best.psnr == max_psnr);
  CHECK(best.ssim == max_ssim);

  const SequenceScore perfect = score_sequence(truth, truth);
  CHECK(perfect.psnr == 99.0);
  CHECK(std::abs(perfect.ssim - 1.0) < 1e-6);
}

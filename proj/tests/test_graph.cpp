#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"

#include "snapflow/graph.hpp"
#include "snapflow/param_store.hpp"
#include "snapflow/rng.hpp"
#include "snapflow/tensor.hpp"

using namespace snapflow;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  for (int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0f);

  Tensor f = Tensor::full({4}, 2.5f);
  for (int64_t i = 0; i < 4; ++i) CHECK(f[i] == 2.5f);
  CHECK(Tensor::scalar(7.0f).numel() == 1);
  CHECK(t.shape_str() == "(2x3)");

  CHECK_THROWS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}));
  CHECK_THROWS(Tensor({0, 3}));

  Tensor bad({2}, {1.0f, std::nanf("")});
  CHECK(!bad.all_finite());
  CHECK_THROWS(bad.require_finite("unit"));
  Tensor good({2}, {1.0f, -2.0f});
  CHECK(good.all_finite());
  good.require_finite("unit");
}

TEST_CASE("elementwise forward values") {
  Graph g;
  NodeId a = g.leaf(Tensor({3}, {1.0f, -2.0f, 0.5f}));
  NodeId b = g.leaf(Tensor({3}, {4.0f, 1.0f, -1.0f}));

  const Tensor& sum = g.value(g.add(a, b));
  CHECK(sum[0] == 5.0f);
  CHECK(sum[1] == -1.0f);

  const Tensor& diff = g.value(g.sub(a, b));
  CHECK(diff[0] == -3.0f);

  const Tensor& prod = g.value(g.mul(a, b));
  CHECK(prod[1] == -2.0f);

  const Tensor& sc = g.value(g.scale(a, 2.0f));
  CHECK(sc[2] == 1.0f);

  const Tensor& shifted = g.value(g.add_scalar(a, 10.0f));
  CHECK(shifted[1] == 8.0f);

  const Tensor& mag = g.value(g.abs(a));
  CHECK(mag[1] == 2.0f);

  const Tensor& sq = g.value(g.square(a));
  CHECK(sq[1] == 4.0f);

  const Tensor& ex = g.value(g.exp(g.leaf(Tensor({1}, {0.0f}))));
  CHECK(ex[0] == 1.0f);

  const Tensor& lr = g.value(g.leaky_relu(g.leaf(Tensor({2}, {-1.0f, 3.0f})), 0.2f));
  CHECK(lr[0] == doctest::Approx(-0.2f));
  CHECK(lr[1] == 3.0f);
}

TEST_CASE("sum and mean of ones") {
  Graph g;
  NodeId x = g.leaf(Tensor::full({4, 5}, 1.0f));
  CHECK(g.value(g.sum(x))[0] == 20.0f);

  Graph g2;
  NodeId y = g2.leaf(Tensor::full({4, 5}, 1.0f));
  CHECK(g2.value(g2.mean(y))[0] == 1.0f);
}

TEST_CASE("sum gradient is ones, square gradient is 2x") {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {1.0f, 2.0f}));
  NodeId loss = g.sum(g.square(x));
  CHECK(g.value(loss)[0] == 5.0f);
  g.backward(loss);
  const Tensor& grad = g.grad(x);
  CHECK(grad[0] == 2.0f);
  CHECK(grad[1] == 4.0f);
}

TEST_CASE("product rule and gradient accumulation on reuse") {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {3.0f}));
  NodeId y = g.leaf(Tensor({1}, {-2.0f}));
  NodeId loss = g.sum(g.mul(x, y));
  g.backward(loss);
  CHECK(g.grad(x)[0] == -2.0f);
  CHECK(g.grad(y)[0] == 3.0f);

  Graph g2;
  NodeId z = g2.leaf(Tensor({1}, {5.0f}));
  NodeId doubled = g2.add(z, z);  // both operands are the same node
  g2.backward(g2.sum(doubled));
  CHECK(g2.grad(z)[0] == 2.0f);
}

TEST_CASE("abs and leaky_relu gradients carry the input sign") {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {-3.0f, 2.0f}));
  g.backward(g.sum(g.abs(x)));
  CHECK(g.grad(x)[0] == -1.0f);
  CHECK(g.grad(x)[1] == 1.0f);

  Graph g2;
  NodeId y = g2.leaf(Tensor({2}, {-1.5f, 4.0f}));
  g2.backward(g2.sum(g2.leaky_relu(y, 0.2f)));
  CHECK(g2.grad(y)[0] == doctest::Approx(0.2f));
  CHECK(g2.grad(y)[1] == 1.0f);
}

TEST_CASE("exp gradient equals its output") {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {1.0f}));
  NodeId e = g.exp(x);
  const float forward = g.value(e)[0];
  CHECK(forward == doctest::Approx(std::exp(1.0f)));
  g.backward(g.sum(e));
  CHECK(g.grad(x)[0] == forward);
}

TEST_CASE("reshape keeps data and routes gradients through") {
  Graph g;
  Rng rng(5);
  Tensor src = random_tensor({2, 6}, rng);
  NodeId x = g.leaf(src);
  NodeId r = g.reshape(x, {3, 4});
  const Tensor& rv = g.value(r);
  CHECK(rv.rank() == 2);
  CHECK(rv.dim(0) == 3);
  CHECK(std::memcmp(rv.data(), src.data(), sizeof(float) * 12) == 0);
  g.backward(g.sum(g.square(r)));
  for (int64_t i = 0; i < 12; ++i)
    CHECK(g.grad(x)[i] == doctest::Approx(2.0f * src[i]));
}

TEST_CASE("narrow slices and scatters its gradient back") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 4}, {10.0f, 11.0f, 12.0f, 13.0f}));
  NodeId mid = g.narrow(x, 1, 1, 2);
  const Tensor& mv = g.value(mid);
  CHECK(mv.dim(1) == 2);
  CHECK(mv[0] == 11.0f);
  CHECK(mv[1] == 12.0f);
  g.backward(g.sum(mid));
  CHECK(g.grad(x)[0] == 0.0f);
  CHECK(g.grad(x)[1] == 1.0f);
  CHECK(g.grad(x)[2] == 1.0f);
  CHECK(g.grad(x)[3] == 0.0f);

  CHECK_THROWS(g.narrow(x, 1, 3, 2));
}

TEST_CASE("concat joins along an axis and splits gradients") {
  Graph g;
  NodeId a = g.leaf(Tensor({1, 2}, {1.0f, 2.0f}));
  NodeId b = g.leaf(Tensor({1, 3}, {3.0f, 4.0f, 5.0f}));
  NodeId c = g.concat(a, b, 1);
  const Tensor& cv = g.value(c);
  CHECK(cv.dim(1) == 5);
  CHECK(cv[0] == 1.0f);
  CHECK(cv[4] == 5.0f);
  g.backward(g.sum(g.scale(c, 3.0f)));
  CHECK(g.grad(a)[1] == 3.0f);
  CHECK(g.grad(b)[2] == 3.0f);
}

TEST_CASE("broadcast_time replicates slices and sums their gradients") {
  Graph g;
  Rng rng(7);
  Tensor src = random_tensor({1, 2, 3, 3}, rng);
  NodeId x = g.leaf(src);
  NodeId v = g.broadcast_time(x, 4);
  const Tensor& vv = g.value(v);
  REQUIRE(vv.rank() == 5);
  CHECK(vv.dim(2) == 4);
  const int64_t hw = 9;
  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < 4; ++t)
      CHECK(std::memcmp(vv.data() + (c * 4 + t) * hw, src.data() + c * hw,
                        sizeof(float) * hw) == 0);
  g.backward(g.sum(v));
  for (int64_t i = 0; i < src.numel(); ++i) CHECK(g.grad(x)[i] == 4.0f);
}

TEST_CASE("3x3 convolution of ones counts the covered taps") {
  Graph g;
  NodeId x = g.leaf(Tensor::full({1, 1, 5, 5}, 1.0f));
  NodeId w = g.leaf(Tensor::full({1, 1, 3, 3}, 1.0f));
  NodeId y = g.convolve(x, w, -1, {1, 1}, {1, 1});
  const Tensor& out = g.value(y);
  REQUIRE(out.dim(2) == 5);
  REQUIRE(out.dim(3) == 5);
  CHECK(out[2 * 5 + 2] == 9.0f);  // interior
  CHECK(out[0] == 4.0f);          // corner
  CHECK(out[2] == 6.0f);          // edge
}

TEST_CASE("convolution bias and stride") {
  Graph g;
  NodeId x = g.leaf(Tensor::full({1, 1, 4, 4}, 1.0f));
  NodeId w = g.leaf(Tensor::full({2, 1, 2, 2}, 0.5f));
  NodeId b = g.leaf(Tensor({2}, {1.0f, -1.0f}));
  NodeId y = g.convolve(x, w, b, {2, 2}, {0, 0});
  const Tensor& out = g.value(y);
  REQUIRE(out.dim(1) == 2);
  REQUIRE(out.dim(2) == 2);
  CHECK(out[0] == 3.0f);   // 4 taps * 0.5 + 1
  CHECK(out[4] == 1.0f);   // second channel bias -1
}

TEST_CASE("convolution covers volumes when the kernel has depth") {
  Graph g;
  NodeId x = g.leaf(Tensor::full({1, 1, 2, 4, 4}, 1.0f));
  NodeId w = g.leaf(Tensor::full({3, 1, 2, 3, 3}, 1.0f));
  NodeId y = g.convolve(x, w, -1, {1, 1, 1}, {0, 1, 1});
  const Tensor& out = g.value(y);
  REQUIRE(out.rank() == 5);
  CHECK(out.dim(1) == 3);
  CHECK(out.dim(2) == 1);
  CHECK(out.dim(3) == 4);
  // interior tap count doubles along the depth axis
  CHECK(out[1 * 4 + 1] == 18.0f);
}

TEST_CASE("linear layer applies w x + b rowwise") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 3}, {1.0f, 2.0f, 3.0f}));
  NodeId w = g.leaf(Tensor({2, 3}, {1.0f, 0.0f, 0.0f, 0.0f, 1.0f, 1.0f}));
  NodeId b = g.leaf(Tensor({2}, {10.0f, 20.0f}));
  const Tensor& out = g.value(g.linear(x, w, b));
  CHECK(out[0] == 11.0f);
  CHECK(out[1] == 25.0f);
}

TEST_CASE("max_pool forwards the window maximum and routes its gradient") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 1, 2, 2}, {1.0f, 3.0f, 2.0f, 0.0f}));
  NodeId y = g.max_pool(x, {2, 2});
  CHECK(g.value(y)[0] == 3.0f);
  g.backward(g.sum(y));
  CHECK(g.grad(x)[0] == 0.0f);
  CHECK(g.grad(x)[1] == 1.0f);
  CHECK(g.grad(x)[2] == 0.0f);

  Graph g2;
  NodeId v = g2.leaf(Tensor::full({1, 2, 4, 6, 6}, 1.0f));
  const Tensor& pooled = g2.value(g2.max_pool(v, {1, 2, 2}));
  REQUIRE(pooled.rank() == 5);
  CHECK(pooled.dim(2) == 4);  // time untouched
  CHECK(pooled.dim(3) == 3);
}

TEST_CASE("upsample_nearest replicates values, its adjoint sums them") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
  NodeId y = g.upsample_nearest(x, {2, 2});
  const Tensor& out = g.value(y);
  REQUIRE(out.dim(2) == 4);
  CHECK(out[0] == 1.0f);
  CHECK(out[1] == 1.0f);
  CHECK(out[4] == 1.0f);
  CHECK(out[2 * 4 + 2] == 4.0f);
  g.backward(g.sum(y));
  for (int i = 0; i < 4; ++i) CHECK(g.grad(x)[i] == 4.0f);

  Graph g2;
  NodeId v = g2.leaf(Tensor::full({1, 1, 2, 3, 3}, 1.0f));
  const Tensor& vol = g2.value(g2.upsample_nearest(v, {2, 2, 2}));
  CHECK(vol.dim(2) == 4);
  CHECK(vol.dim(3) == 6);
}

TEST_CASE("batch_norm train mode normalizes and tracks running stats") {
  Graph g;
  Rng rng(11);
  Tensor src = random_tensor({4, 2, 3, 3}, rng, 0.0, 10.0);
  NodeId x = g.leaf(src);
  NodeId gamma = g.leaf(Tensor::full({2}, 1.0f));
  NodeId beta = g.leaf(Tensor({2}));
  Tensor rm({2});
  Tensor rv = Tensor::full({2}, 1.0f);
  NodeId y = g.batch_norm(x, gamma, beta, {&rm, &rv}, BatchNormMode::kTrain);

  const Tensor& out = g.value(y);
  const int64_t per = 4 * 9;
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (int s = 0; s < 4; ++s)
      for (int64_t i = 0; i < 9; ++i) mean += out[(s * 2 + c) * 9 + i];
    mean /= static_cast<double>(per);
    for (int s = 0; s < 4; ++s)
      for (int64_t i = 0; i < 9; ++i) {
        const double d = out[(s * 2 + c) * 9 + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(per);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  // momentum 0.1 against fresh stats (mean 0, var 1)
  double batch_mean = 0.0;
  for (int s = 0; s < 4; ++s)
    for (int64_t i = 0; i < 9; ++i) batch_mean += src[(s * 2 + 0) * 9 + i];
  batch_mean /= static_cast<double>(per);
  CHECK(rm[0] == doctest::Approx(0.1 * batch_mean).epsilon(1e-4));
  CHECK(rv[0] > 1.0f);  // data spread far exceeds the initial unit variance
}

TEST_CASE("batch_norm eval mode applies the stored statistics") {
  Graph g;
  Tensor src({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  NodeId x = g.leaf(src);
  NodeId gamma = g.leaf(Tensor::full({1}, 2.0f));
  NodeId beta = g.leaf(Tensor::full({1}, 5.0f));
  Tensor rm = Tensor::full({1}, 2.5f);
  Tensor rv = Tensor::full({1}, 4.0f);
  NodeId y = g.batch_norm(x, gamma, beta, {&rm, &rv}, BatchNormMode::kEval);
  const Tensor& out = g.value(y);
  const float inv = 1.0f / std::sqrt(4.0f + 1e-5f);
  CHECK(out[0] == doctest::Approx(2.0f * (1.0f - 2.5f) * inv + 5.0f));
  CHECK(rm[0] == 2.5f);  // eval never rewrites the stats

  Graph g2;
  NodeId x2 = g2.leaf(src);
  NodeId g2m = g2.leaf(Tensor::full({1}, 1.0f));
  NodeId b2 = g2.leaf(Tensor({1}));
  CHECK_THROWS(g2.batch_norm(x2, g2m, b2, {}, BatchNormMode::kEval));
}

TEST_CASE("backward rejects a second sweep over the same tape") {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {1.0f, 2.0f}));
  NodeId loss = g.sum(x);
  g.backward(loss);
  CHECK_THROWS(g.backward(loss));
}

TEST_CASE("backward requires a scalar") {
  Graph g;
  NodeId x = g.leaf(Tensor({3}, {1.0f, 2.0f, 3.0f}));
  CHECK_THROWS(g.backward(x));
}

TEST_CASE("constants do not collect gradients") {
  Graph g;
  NodeId c = g.constant(Tensor({2}, {1.0f, 2.0f}));
  NodeId x = g.leaf(Tensor({2}, {3.0f, 4.0f}));
  g.backward(g.sum(g.mul(c, x)));
  CHECK(g.grad(x)[0] == 1.0f);
  CHECK(!g.has_grad(c));
}

TEST_CASE("param nodes report gradients by name") {
  ParamStore ps;
  Rng rng(3);
  ps.add("w", random_tensor({4}, rng));
  ps.add("frozen", random_tensor({4}, rng), false);

  Graph g;
  NodeId w = g.param(ps, "w");
  NodeId f = g.param(ps, "frozen");
  g.backward(g.add(g.sum(g.square(w)), g.sum(f)));

  auto grads = g.param_grads();
  REQUIRE(grads.count("w") == 1);
  CHECK(grads.count("frozen") == 0);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(grads.at("w")[i] == doctest::Approx(2.0f * ps.get("w")[i]));
}

TEST_CASE("identical graphs produce identical bits") {
  auto build = [] {
    Rng rng(99);
    Graph g;
    NodeId x = g.leaf(random_tensor({2, 3, 8, 8}, rng));
    NodeId w = g.leaf(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
    NodeId y = g.leaky_relu(g.convolve(x, w, -1, {1, 1}, {1, 1}), 0.2f);
    NodeId loss = g.mean(g.square(y));
    const float value = g.value(loss)[0];
    g.backward(loss);
    Tensor grad = g.grad(x);
    return std::pair<float, Tensor>(value, std::move(grad));
  };
  auto [v1, g1] = build();
  auto [v2, g2] = build();
  CHECK(v1 == v2);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(float) * g1.numel()) == 0);
}

TEST_CASE("shape checks reject mismatched operands") {
  Graph g;
  NodeId a = g.leaf(Tensor({2, 3}));
  NodeId b = g.leaf(Tensor({3, 2}));
  CHECK_THROWS(g.add(a, b));
  CHECK_THROWS(g.mul(a, b));
  CHECK_THROWS(g.reshape(a, {4, 2}));

  NodeId x = g.leaf(Tensor({1, 2, 4, 4}));
  NodeId w = g.leaf(Tensor({1, 3, 3, 3}));  // channel count differs
  CHECK_THROWS(g.convolve(x, w, -1, {1, 1}, {1, 1}));
}

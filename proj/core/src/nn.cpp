#include "snapflow/nn.hpp"

#include <cmath>

namespace snapflow::nn {

void init_he_normal(Tensor& w, int64_t fan_in, Rng& rng) {
  check(fan_in > 0, "init_he_normal: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  const int64_t n = w.numel();
  for (int64_t i = 0; i < n; ++i)
    w[i] = static_cast<float>(stddev * rng.normal());
}

NodeId Conv::operator()(Graph& g, const ParamStore& ps, NodeId x) const {
  const NodeId wn = g.param(ps, w);
  const NodeId bn = b.empty() ? NodeId{-1} : g.param(ps, b);
  return g.convolve(x, wn, bn, stride, padding);
}

Conv make_conv(ParamStore& ps, const std::string& prefix, int ci, int co,
               std::vector<int> kernel, std::vector<int> stride,
               std::vector<int> padding, Rng& rng, bool bias) {
  std::vector<int> wshape = {co, ci};
  int64_t fan_in = ci;
  for (int k : kernel) {
    wshape.push_back(k);
    fan_in *= k;
  }
  Tensor w(wshape);
  init_he_normal(w, fan_in, rng);
  Conv layer;
  layer.w = prefix + ".w";
  layer.stride = std::move(stride);
  layer.padding = std::move(padding);
  ps.add(layer.w, std::move(w));
  if (bias) {
    layer.b = prefix + ".b";
    ps.add(layer.b, Tensor({co}));
  }
  return layer;
}

NodeId Linear::operator()(Graph& g, const ParamStore& ps, NodeId x) const {
  const NodeId wn = g.param(ps, w);
  const NodeId bn = b.empty() ? NodeId{-1} : g.param(ps, b);
  return g.linear(x, wn, bn);
}

Linear make_linear(ParamStore& ps, const std::string& prefix, int in, int out,
                   Rng& rng, bool bias) {
  Tensor w({out, in});
  init_he_normal(w, in, rng);
  Linear layer;
  layer.w = prefix + ".w";
  ps.add(layer.w, std::move(w));
  if (bias) {
    layer.b = prefix + ".b";
    ps.add(layer.b, Tensor({out}));
  }
  return layer;
}

NodeId BatchNorm::operator()(Graph& g, ParamStore& ps, NodeId x,
                             BatchNormMode mode) const {
  BatchNormState state;
  state.running_mean = &ps.get(running_mean);
  state.running_var = &ps.get(running_var);
  return g.batch_norm(x, g.param(ps, gamma), g.param(ps, beta), state, mode);
}

BatchNorm make_batch_norm(ParamStore& ps, const std::string& prefix, int channels) {
  BatchNorm layer;
  layer.gamma = prefix + ".gamma";
  layer.beta = prefix + ".beta";
  layer.running_mean = prefix + ".running_mean";
  layer.running_var = prefix + ".running_var";
  ps.add(layer.gamma, Tensor::full({channels}, 1.0f));
  ps.add(layer.beta, Tensor({channels}));
  ps.add(layer.running_mean, Tensor({channels}), /*trainable=*/false);
  ps.add(layer.running_var, Tensor::full({channels}, 1.0f), /*trainable=*/false);
  return layer;
}

}  // namespace snapflow::nn

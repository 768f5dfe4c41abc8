#include "snapflow/adam.hpp"

#include <cmath>

namespace snapflow {

void Adam::step(ParamStore& ps, const std::map<std::string, Tensor>& grads) {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
  for (auto& [name, entry] : ps) {
    if (!entry.trainable) continue;
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    check(g.same_shape(entry.tensor), "adam: gradient shape ", g.shape_str(),
          " does not match parameter ", name, " ", entry.tensor.shape_str());
    check(g.all_finite(), "adam: non-finite gradient for parameter ", name);

    auto [mit, fresh] = moments_.try_emplace(name);
    Moments& mo = mit->second;
    if (fresh) {
      mo.m = Tensor(entry.tensor.shape());
      mo.v = Tensor(entry.tensor.shape());
    }
    check(mo.m.same_shape(entry.tensor), "adam: stale moment shape for ", name);

    Tensor& p = entry.tensor;
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      const float gi = g[i];
      mo.m[i] = beta1_ * mo.m[i] + (1.0f - beta1_) * gi;
      mo.v[i] = beta2_ * mo.v[i] + (1.0f - beta2_) * gi * gi;
      const double mhat = static_cast<double>(mo.m[i]) / bc1;
      const double vhat = static_cast<double>(mo.v[i]) / bc2;
      p[i] -= static_cast<float>(static_cast<double>(lr_) * mhat /
                                 (std::sqrt(vhat) + static_cast<double>(eps_)));
    }
  }
}

std::map<std::string, Tensor> Adam::export_state() const {
  std::map<std::string, Tensor> out;
  out.emplace("t", Tensor::scalar(static_cast<float>(t_)));
  for (const auto& [name, mo] : moments_) {
    out.emplace(name + ".m", mo.m);
    out.emplace(name + ".v", mo.v);
  }
  return out;
}

void Adam::import_state(const std::map<std::string, Tensor>& state) {
  moments_.clear();
  t_ = 0;
  auto it = state.find("t");
  if (it != state.end()) t_ = static_cast<int64_t>(it->second[0]);
  for (const auto& [name, tensor] : state) {
    if (name == "t") continue;
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".m") == 0) {
      moments_[name.substr(0, name.size() - 2)].m = tensor;
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".v") == 0) {
      moments_[name.substr(0, name.size() - 2)].v = tensor;
    }
  }
}

}  // namespace snapflow

#pragma once

#include <map>
#include <string>

#include "snapflow/param_store.hpp"

namespace snapflow {

// Adam with bias correction. Moment buffers are keyed by parameter name and
// created lazily, so the optimizer can outlive checkpoint reloads as long as
// shapes stay put.
class Adam {
 public:
  explicit Adam(float lr = 1e-3f, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from gradients keyed by parameter name. Trainable
  // parameters without a gradient entry are left alone. A non-finite
  // gradient aborts with the offending parameter in the message.
  void step(ParamStore& ps, const std::map<std::string, Tensor>& grads);

  int64_t steps_taken() const { return t_; }
  float learning_rate() const { return lr_; }
  void set_learning_rate(float lr) { lr_ = lr; }

  // Moment buffers and step counter, for exact training resume.
  std::map<std::string, Tensor> export_state() const;
  void import_state(const std::map<std::string, Tensor>& state);

 private:
  struct Moments {
    Tensor m, v;
  };

  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace snapflow

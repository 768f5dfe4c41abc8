#pragma once

#include <cstdint>
#include <vector>

#include "snapflow/common.hpp"

namespace snapflow {

// Dense row-major f32 array. Shapes use the channels-first convention
// throughout the network code: (N, C, H, W) for 2-D feature maps and
// (N, C, T, H, W) for spatiotemporal volumes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0f);
  }
  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(static_cast<int64_t>(data_.size()) == numel_of(shape_),
          "tensor data length ", data_.size(), " does not match shape ", shape_str());
  }

  static Tensor full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }
  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  bool all_finite() const;
  // Throws if any element is NaN or Inf; `what` names the producing op.
  void require_finite(const char* what) const;

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      check(d > 0, "non-positive dimension in shape");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
};

}  // namespace snapflow

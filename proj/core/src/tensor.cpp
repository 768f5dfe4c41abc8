#include "snapflow/tensor.hpp"

#include <cmath>

namespace snapflow {

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::require_finite(const char* what) const {
  check(all_finite(), what, ": tensor of shape ", shape_str(),
        " contains NaN or Inf");
}

}  // namespace snapflow

#pragma once

#include <string>
#include <vector>

#include "snapflow/graph.hpp"
#include "snapflow/param_store.hpp"
#include "snapflow/rng.hpp"

namespace snapflow::nn {

// Gaussian fill with std = sqrt(2 / fan_in).
void init_he_normal(Tensor& w, int64_t fan_in, Rng& rng);

// Convolution layer handle; the tensors live in the ParamStore under
// "<prefix>.w" / "<prefix>.b". Covers 2-D and 3-D kernels by rank.
struct Conv {
  std::string w, b;  // b empty when the layer has no bias
  std::vector<int> stride, padding;

  NodeId operator()(Graph& g, const ParamStore& ps, NodeId x) const;
};

Conv make_conv(ParamStore& ps, const std::string& prefix, int ci, int co,
               std::vector<int> kernel, std::vector<int> stride,
               std::vector<int> padding, Rng& rng, bool bias = true);

struct Linear {
  std::string w, b;

  NodeId operator()(Graph& g, const ParamStore& ps, NodeId x) const;
};

Linear make_linear(ParamStore& ps, const std::string& prefix, int in, int out,
                   Rng& rng, bool bias = true);

// Batch normalization over the channel axis. Running statistics are stored as
// non-trainable entries and updated in place during training-mode forward
// passes, so apply() needs the mutable store.
struct BatchNorm {
  std::string gamma, beta, running_mean, running_var;

  NodeId operator()(Graph& g, ParamStore& ps, NodeId x, BatchNormMode mode) const;
};

BatchNorm make_batch_norm(ParamStore& ps, const std::string& prefix, int channels);

}  // namespace snapflow::nn

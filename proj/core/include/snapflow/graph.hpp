#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "snapflow/param_store.hpp"
#include "snapflow/tensor.hpp"

namespace snapflow {

using NodeId = int32_t;

enum class BatchNormMode { kTrain, kEval };

// Running statistics handed to batch_norm. In train mode the forward pass
// writes the updated running mean/var back through these references.
struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

// Reverse-mode tape. Operations append nodes in execution order, which is a
// topological order by construction; backward() walks the tape once in
// reverse. A Graph is built for one forward/backward cycle and discarded.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- node creation -------------------------------------------------------
  NodeId constant(Tensor t);
  NodeId leaf(Tensor t);  // differentiable input
  // Copies the named tensor out of the store; backward() leaves the gradient
  // retrievable per name (see grad_for).
  NodeId param(const ParamStore& store, const std::string& name);

  const Tensor& value(NodeId id) const;
  // Gradient of the last backward() target w.r.t. this node. Only leaves and
  // params retain gradients after the backward sweep.
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const;

  // Runs reverse-mode accumulation from a scalar loss. A second call without
  // recording new work is rejected. Interior values and gradients are
  // released as the sweep passes them.
  void backward(NodeId loss);

  // --- elementwise / shape -------------------------------------------------
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, float c);
  NodeId add_scalar(NodeId a, float c);
  NodeId abs(NodeId a);
  NodeId square(NodeId a);
  NodeId exp(NodeId a);
  NodeId leaky_relu(NodeId a, float slope);
  NodeId reshape(NodeId a, std::vector<int> shape);
  NodeId narrow(NodeId a, int axis, int start, int length);
  NodeId concat(NodeId a, NodeId b, int axis);
  // (N,C,H,W) -> (N,C,T,H,W) with identical content in every time slice.
  NodeId broadcast_time(NodeId a, int t);

  // --- reductions (f64 accumulation, fixed order) ---------------------------
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  // --- neural primitives ----------------------------------------------------
  // x: (N,Ci,H,W) or (N,Ci,D,H,W); w: (Co,Ci,k...);  b: (Co) or -1 for none.
  NodeId convolve(NodeId x, NodeId w, NodeId b, std::vector<int> stride,
                  std::vector<int> padding);
  // x: (N,K) row-major, w: (Co,K), b: (Co) or -1.
  NodeId linear(NodeId x, NodeId w, NodeId b);
  NodeId max_pool(NodeId x, std::vector<int> stride);
  NodeId upsample_nearest(NodeId x, std::vector<int> factors);
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, BatchNormState state,
                    BatchNormMode mode, float eps = 1e-5f, float momentum = 0.1f);

  // Backward bilinear sampling: out(x) = src(x + flow(x)), coordinates
  // clamped to the source border. src: (N,C,H,W), flow: (N,2,H,W) with
  // channel 0 = dx (right positive), channel 1 = dy (down positive).
  NodeId warp_bilinear(NodeId src, NodeId flow);

  size_t node_count() const { return nodes_.size(); }

  // Collects gradients of all param() leaves by name. Missing entries mean
  // the parameter was unreachable from the loss.
  std::map<std::string, Tensor> param_grads() const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string param_name;
    std::function<void(Graph&, NodeId)> backprop;  // null for leaves/constants
  };

  NodeId emplace(Node n);
  Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  // Accumulates `delta` into the node's gradient buffer if it wants one.
  void accumulate(NodeId id, const Tensor& delta);
  void accumulate_raw(NodeId id, const float* delta, int64_t n);
  Tensor* grad_sink(NodeId id);  // nullptr when the node does not need a grad

  std::vector<Node> nodes_;
  bool backward_ran_ = false;
  int64_t ops_since_backward_ = 0;

  friend struct GraphOps;
};

}  // namespace snapflow

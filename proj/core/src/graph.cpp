#include "snapflow/graph.hpp"

#include <cmath>
#include <cstring>

namespace snapflow {

namespace {

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * shape[i + 1];
  return s;
}

}  // namespace

NodeId Graph::emplace(Node n) {
  nodes_.push_back(std::move(n));
  ++ops_since_backward_;
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.requires_grad = false;
  n.is_leaf = true;
  return emplace(std::move(n));
}

NodeId Graph::leaf(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.value.set_requires_grad(true);
  n.requires_grad = true;
  n.is_leaf = true;
  return emplace(std::move(n));
}

NodeId Graph::param(const ParamStore& store, const std::string& name) {
  Node n;
  n.value = store.get(name);
  n.requires_grad = store.trainable(name);
  n.is_leaf = true;
  n.param_name = name;
  return emplace(std::move(n));
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Tensor& Graph::grad(NodeId id) const {
  check(node(id).has_grad, "node has no gradient (not reachable from the loss, "
        "or released after backward)");
  return node(id).grad;
}

bool Graph::has_grad(NodeId id) const { return node(id).has_grad; }

Tensor* Graph::grad_sink(NodeId id) {
  Node& n = node(id);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Graph::accumulate(NodeId id, const Tensor& delta) {
  accumulate_raw(id, delta.data(), delta.numel());
}

void Graph::accumulate_raw(NodeId id, const float* delta, int64_t n) {
  Tensor* g = grad_sink(id);
  if (!g) return;
  check(g->numel() == n, "gradient length mismatch");
  float* dst = g->data();
  for (int64_t i = 0; i < n; ++i) dst[i] += delta[i];
}

void Graph::backward(NodeId loss) {
  check(node(loss).value.numel() == 1,
        "backward requires a scalar loss, got shape ", node(loss).value.shape_str());
  check(!backward_ran_ || ops_since_backward_ > 0,
        "backward called twice without recording a new forward pass");
  backward_ran_ = true;
  ops_since_backward_ = 0;

  Node& top = node(loss);
  top.grad = Tensor::scalar(1.0f);
  top.has_grad = true;
  if (!top.requires_grad) return;

  for (NodeId id = loss; id >= 0; --id) {
    Node& n = node(id);
    if (n.has_grad && n.backprop) n.backprop(*this, id);
    if (!n.is_leaf && id != loss) {
      // children have already consumed this node; free its buffers
      n.value = Tensor();
      n.grad = Tensor();
      n.has_grad = false;
    }
  }
}

std::map<std::string, Tensor> Graph::param_grads() const {
  std::map<std::string, Tensor> out;
  for (const Node& n : nodes_) {
    if (!n.param_name.empty() && n.has_grad) out.emplace(n.param_name, n.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check(ta.same_shape(tb), "add: shape mismatch ", ta.shape_str(), " vs ", tb.shape_str());
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] + tb[i];
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, b](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      g.accumulate(a, go);
      g.accumulate(b, go);
    };
  return emplace(std::move(nd));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check(ta.same_shape(tb), "sub: shape mismatch ", ta.shape_str(), " vs ", tb.shape_str());
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] - tb[i];
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, b](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      g.accumulate(a, go);
      if (Tensor* gb = g.grad_sink(b)) {
        const int64_t n2 = go.numel();
        for (int64_t i = 0; i < n2; ++i) (*gb)[i] -= go[i];
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check(ta.same_shape(tb), "mul: shape mismatch ", ta.shape_str(), " vs ", tb.shape_str());
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] * tb[i];
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, b](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      const int64_t n2 = go.numel();
      if (Tensor* ga = g.grad_sink(a)) {
        const Tensor& vb = g.value(b);
        for (int64_t i = 0; i < n2; ++i) (*ga)[i] += go[i] * vb[i];
      }
      if (Tensor* gb = g.grad_sink(b)) {
        const Tensor& va = g.value(a);
        for (int64_t i = 0; i < n2; ++i) (*gb)[i] += go[i] * va[i];
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::scale(NodeId a, float c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] * c;
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, c](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a)) {
        const int64_t n2 = go.numel();
        for (int64_t i = 0; i < n2; ++i) (*ga)[i] += go[i] * c;
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::add_scalar(NodeId a, float c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] + c;
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a](Graph& g, NodeId self) { g.accumulate(a, g.node(self).grad); };
  return emplace(std::move(nd));
}

NodeId Graph::abs(NodeId a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::fabs(ta[i]);
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a)) {
        const Tensor& va = g.value(a);
        const int64_t n2 = go.numel();
        // subgradient 0 at the kink
        for (int64_t i = 0; i < n2; ++i)
          (*ga)[i] += go[i] * (va[i] > 0.0f ? 1.0f : (va[i] < 0.0f ? -1.0f : 0.0f));
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::square(NodeId a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] * ta[i];
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a)) {
        const Tensor& va = g.value(a);
        const int64_t n2 = go.numel();
        for (int64_t i = 0; i < n2; ++i) (*ga)[i] += go[i] * 2.0f * va[i];
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::exp(NodeId a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::exp(ta[i]);
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& vo = g.node(self).value;
      if (Tensor* ga = g.grad_sink(a)) {
        const int64_t n2 = go.numel();
        for (int64_t i = 0; i < n2; ++i) (*ga)[i] += go[i] * vo[i];
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::leaky_relu(NodeId a, float slope) {
  check(slope >= 0.0f && slope < 1.0f, "leaky_relu: slope must be in [0,1), got ", slope);
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] >= 0.0f ? ta[i] : slope * ta[i];
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, slope](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a)) {
        const Tensor& va = g.value(a);
        const int64_t n2 = go.numel();
        // subgradient at 0 is the slope
        for (int64_t i = 0; i < n2; ++i)
          (*ga)[i] += go[i] * (va[i] > 0.0f ? 1.0f : slope);
      }
    };
  return emplace(std::move(nd));
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

NodeId Graph::reshape(NodeId a, std::vector<int> shape) {
  const Tensor& ta = value(a);
  check(Tensor::numel_of(shape) == ta.numel(), "reshape: element count mismatch from ",
        ta.shape_str());
  Tensor out(std::move(shape));
  std::memcpy(out.data(), ta.data(), sizeof(float) * static_cast<size_t>(ta.numel()));
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a](Graph& g, NodeId self) {
      g.accumulate_raw(a, g.node(self).grad.data(), g.node(self).grad.numel());
    };
  return emplace(std::move(nd));
}

NodeId Graph::narrow(NodeId a, int axis, int start, int length) {
  const Tensor& ta = value(a);
  check(axis >= 0 && axis < ta.rank(), "narrow: bad axis ", axis);
  check(start >= 0 && length > 0 && start + length <= ta.dim(axis),
        "narrow: range [", start, ",", start + length, ") out of bounds for dim ",
        ta.dim(axis));
  auto in_shape = ta.shape();
  auto out_shape = in_shape;
  out_shape[static_cast<size_t>(axis)] = length;

  auto in_strides = strides_of(in_shape);
  const int64_t outer = [&] {
    int64_t o = 1;
    for (int i = 0; i < axis; ++i) o *= in_shape[static_cast<size_t>(i)];
    return o;
  }();
  const int64_t inner = in_strides[static_cast<size_t>(axis)];
  const int64_t in_axis = in_shape[static_cast<size_t>(axis)];

  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * length * inner,
                ta.data() + (o * in_axis + start) * inner,
                sizeof(float) * static_cast<size_t>(length * inner));
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, outer, inner, in_axis, start, length](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a)) {
        for (int64_t o = 0; o < outer; ++o) {
          float* dst = ga->data() + (o * in_axis + start) * inner;
          const float* src = go.data() + o * length * inner;
          for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
        }
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::concat(NodeId a, NodeId b, int axis) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check(ta.rank() == tb.rank(), "concat: rank mismatch");
  check(axis >= 0 && axis < ta.rank(), "concat: bad axis ", axis);
  for (int i = 0; i < ta.rank(); ++i)
    if (i != axis)
      check(ta.dim(i) == tb.dim(i), "concat: shape mismatch ", ta.shape_str(), " vs ",
            tb.shape_str(), " on axis ", i);

  auto out_shape = ta.shape();
  out_shape[static_cast<size_t>(axis)] += tb.dim(axis);
  auto strides = strides_of(ta.shape());
  const int64_t inner = strides[static_cast<size_t>(axis)];
  const int64_t la = ta.dim(axis) * inner;
  const int64_t lb = tb.dim(axis) * inner;
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= ta.dim(i);

  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (la + lb), ta.data() + o * la,
                sizeof(float) * static_cast<size_t>(la));
    std::memcpy(out.data() + o * (la + lb) + la, tb.data() + o * lb,
                sizeof(float) * static_cast<size_t>(lb));
  }
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, b, outer, la, lb](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a))
        for (int64_t o = 0; o < outer; ++o) {
          const float* src = go.data() + o * (la + lb);
          float* dst = ga->data() + o * la;
          for (int64_t i = 0; i < la; ++i) dst[i] += src[i];
        }
      if (Tensor* gb = g.grad_sink(b))
        for (int64_t o = 0; o < outer; ++o) {
          const float* src = go.data() + o * (la + lb) + la;
          float* dst = gb->data() + o * lb;
          for (int64_t i = 0; i < lb; ++i) dst[i] += src[i];
        }
    };
  return emplace(std::move(nd));
}

NodeId Graph::broadcast_time(NodeId a, int t) {
  const Tensor& ta = value(a);
  check(ta.rank() == 4, "broadcast_time expects (N,C,H,W), got ", ta.shape_str());
  check(t > 0, "broadcast_time: t must be positive");
  const int n = ta.dim(0), c = ta.dim(1), h = ta.dim(2), w = ta.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({n, c, t, h, w});
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc)
    for (int k = 0; k < t; ++k)
      std::memcpy(out.data() + (nc * t + k) * hw, ta.data() + nc * hw,
                  sizeof(float) * static_cast<size_t>(hw));
  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, n, c, t, hw](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* ga = g.grad_sink(a)) {
        for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
          float* dst = ga->data() + nc * hw;
          for (int k = 0; k < t; ++k) {
            const float* src = go.data() + (nc * t + k) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
          }
        }
      }
    };
  return emplace(std::move(nd));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

NodeId Graph::sum(NodeId a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(ta[i]);
  Node nd;
  nd.value = Tensor::scalar(static_cast<float>(acc));
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a](Graph& g, NodeId self) {
      const float go = g.node(self).grad[0];
      if (Tensor* ga = g.grad_sink(a)) {
        const int64_t n2 = ga->numel();
        for (int64_t i = 0; i < n2; ++i) (*ga)[i] += go;
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::mean(NodeId a) {
  const Tensor& ta = value(a);
  const int64_t n = ta.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(ta[i]);
  Node nd;
  nd.value = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  nd.requires_grad = node(a).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [a, n](Graph& g, NodeId self) {
      const float go = g.node(self).grad[0] / static_cast<float>(n);
      if (Tensor* ga = g.grad_sink(a)) {
        for (int64_t i = 0; i < n; ++i) (*ga)[i] += go;
      }
    };
  return emplace(std::move(nd));
}

}  // namespace snapflow

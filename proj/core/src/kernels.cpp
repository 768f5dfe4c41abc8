#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "snapflow/graph.hpp"

namespace snapflow {

namespace {

// Flattens (N,C,spatial...) bookkeeping shared by pool and upsample.
struct SpatialView {
  int n, c;
  std::vector<int> sp;
  int64_t sp_elems = 1;
};

SpatialView spatial_view(const Tensor& t) {
  check(t.rank() == 4 || t.rank() == 5, "expected (N,C,H,W) or (N,C,T,H,W), got ",
        t.shape_str());
  SpatialView v;
  v.n = t.dim(0);
  v.c = t.dim(1);
  for (int i = 2; i < t.rank(); ++i) {
    v.sp.push_back(t.dim(i));
    v.sp_elems *= t.dim(i);
  }
  return v;
}

}  // namespace

NodeId Graph::max_pool(NodeId x, std::vector<int> stride) {
  const Tensor& tx = value(x);
  const SpatialView v = spatial_view(tx);
  const int sd = static_cast<int>(v.sp.size());
  check(static_cast<int>(stride.size()) == sd, "max_pool: need ", sd, " stride entries");
  std::vector<int> out_sp(static_cast<size_t>(sd));
  for (int i = 0; i < sd; ++i) {
    check(stride[static_cast<size_t>(i)] > 0, "max_pool: stride must be positive");
    check(v.sp[static_cast<size_t>(i)] % stride[static_cast<size_t>(i)] == 0,
          "max_pool: extent ", v.sp[static_cast<size_t>(i)], " on axis ", i,
          " is not divisible by stride ", stride[static_cast<size_t>(i)]);
    out_sp[static_cast<size_t>(i)] = v.sp[static_cast<size_t>(i)] / stride[static_cast<size_t>(i)];
  }

  // normalize to 3 spatial dims, leading ones for the 2D case
  const int it = sd == 3 ? v.sp[0] : 1, ih = v.sp[sd - 2], iw = v.sp[sd - 1];
  const int st = sd == 3 ? stride[0] : 1, sh = stride[sd - 2], sw = stride[sd - 1];
  const int ot = it / st, oh = ih / sh, ow = iw / sw;

  std::vector<int> out_shape = {v.n, v.c};
  out_shape.insert(out_shape.end(), out_sp.begin(), out_sp.end());
  Tensor out(out_shape);
  const int64_t out_sp_elems = static_cast<int64_t>(ot) * oh * ow;
  std::vector<int32_t> argmax(static_cast<size_t>(static_cast<int64_t>(v.n) * v.c * out_sp_elems));

  const int64_t planes = static_cast<int64_t>(v.n) * v.c;
  for (int64_t pl = 0; pl < planes; ++pl) {
    const float* src = tx.data() + pl * v.sp_elems;
    float* dst = out.data() + pl * out_sp_elems;
    int32_t* amax = argmax.data() + pl * out_sp_elems;
    int64_t o = 0;
    for (int t = 0; t < ot; ++t)
      for (int h = 0; h < oh; ++h)
        for (int w = 0; w < ow; ++w, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          int32_t best_at = 0;
          for (int dt = 0; dt < st; ++dt)
            for (int dh = 0; dh < sh; ++dh)
              for (int dw = 0; dw < sw; ++dw) {
                const int64_t at = (static_cast<int64_t>(t * st + dt) * ih + h * sh + dh) * iw +
                                   w * sw + dw;
                if (src[at] > best) {
                  best = src[at];
                  best_at = static_cast<int32_t>(at);
                }
              }
          dst[o] = best;
          amax[o] = best_at;
        }
  }

  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(x).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [x, planes, out_sp_elems, sp_elems = v.sp_elems,
                   argmax = std::move(argmax)](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* gx = g.grad_sink(x)) {
        for (int64_t pl = 0; pl < planes; ++pl) {
          const float* src = go.data() + pl * out_sp_elems;
          const int32_t* amax = argmax.data() + pl * out_sp_elems;
          float* dst = gx->data() + pl * sp_elems;
          for (int64_t o = 0; o < out_sp_elems; ++o) dst[amax[o]] += src[o];
        }
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::upsample_nearest(NodeId x, std::vector<int> factors) {
  const Tensor& tx = value(x);
  const SpatialView v = spatial_view(tx);
  const int sd = static_cast<int>(v.sp.size());
  check(static_cast<int>(factors.size()) == sd, "upsample_nearest: need ", sd,
        " factors");
  for (int f : factors) check(f >= 1, "upsample_nearest: factors must be >= 1");

  const int it = sd == 3 ? v.sp[0] : 1, ih = v.sp[sd - 2], iw = v.sp[sd - 1];
  const int ft = sd == 3 ? factors[0] : 1, fh = factors[sd - 2], fw = factors[sd - 1];
  const int ot = it * ft, oh = ih * fh, ow = iw * fw;

  std::vector<int> out_shape = {v.n, v.c};
  if (sd == 3) out_shape.push_back(ot);
  out_shape.push_back(oh);
  out_shape.push_back(ow);
  Tensor out(out_shape);
  const int64_t out_sp = static_cast<int64_t>(ot) * oh * ow;

  const int64_t planes = static_cast<int64_t>(v.n) * v.c;
  for (int64_t pl = 0; pl < planes; ++pl) {
    const float* src = tx.data() + pl * v.sp_elems;
    float* dst = out.data() + pl * out_sp;
    for (int t = 0; t < ot; ++t) {
      const float* st_plane = src + static_cast<int64_t>(t / ft) * ih * iw;
      for (int h = 0; h < oh; ++h) {
        const float* srow = st_plane + static_cast<int64_t>(h / fh) * iw;
        float* drow = dst + (static_cast<int64_t>(t) * oh + h) * ow;
        if (fw == 1) {
          std::memcpy(drow, srow, sizeof(float) * static_cast<size_t>(ow));
        } else {
          for (int w = 0; w < ow; ++w) drow[w] = srow[w / fw];
        }
      }
    }
  }

  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(x).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [x, planes, sp_elems = v.sp_elems, it, ih, iw, ft, fh, fw, ot, oh, ow,
                   out_sp](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* gx = g.grad_sink(x)) {
        for (int64_t pl = 0; pl < planes; ++pl) {
          const float* src = go.data() + pl * out_sp;
          float* dst = gx->data() + pl * sp_elems;
          for (int t = 0; t < ot; ++t) {
            float* dt_plane = dst + static_cast<int64_t>(t / ft) * ih * iw;
            for (int h = 0; h < oh; ++h) {
              float* drow = dt_plane + static_cast<int64_t>(h / fh) * iw;
              const float* srow = src + (static_cast<int64_t>(t) * oh + h) * ow;
              for (int w = 0; w < ow; ++w) drow[w / fw] += srow[w];
            }
          }
        }
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta, BatchNormState state,
                         BatchNormMode mode, float eps, float momentum) {
  const Tensor& tx = value(x);
  const SpatialView v = spatial_view(tx);
  const int c = v.c;
  check(value(gamma).rank() == 1 && value(gamma).dim(0) == c, "batch_norm: gamma must be (",
        c, "), got ", value(gamma).shape_str());
  check(value(beta).rank() == 1 && value(beta).dim(0) == c, "batch_norm: beta must be (",
        c, "), got ", value(beta).shape_str());

  const int64_t per_channel = static_cast<int64_t>(v.n) * v.sp_elems;
  std::vector<float> mean_v(static_cast<size_t>(c)), var_v(static_cast<size_t>(c));

  if (mode == BatchNormMode::kTrain) {
    for (int ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (int s = 0; s < v.n; ++s) {
        const float* plane =
            tx.data() + (static_cast<int64_t>(s) * c + ch) * v.sp_elems;
        for (int64_t i = 0; i < v.sp_elems; ++i) m += static_cast<double>(plane[i]);
      }
      m /= static_cast<double>(per_channel);
      double var = 0.0;
      for (int s = 0; s < v.n; ++s) {
        const float* plane =
            tx.data() + (static_cast<int64_t>(s) * c + ch) * v.sp_elems;
        for (int64_t i = 0; i < v.sp_elems; ++i) {
          const double d = static_cast<double>(plane[i]) - m;
          var += d * d;
        }
      }
      var /= static_cast<double>(per_channel);  // biased, used for normalization
      mean_v[static_cast<size_t>(ch)] = static_cast<float>(m);
      var_v[static_cast<size_t>(ch)] = static_cast<float>(var);

      if (state.running_mean && state.running_var) {
        check(state.running_mean->numel() == c && state.running_var->numel() == c,
              "batch_norm: running stats must have ", c, " entries");
        const double unbiased =
            per_channel > 1 ? var * static_cast<double>(per_channel) /
                                  static_cast<double>(per_channel - 1)
                            : var;
        float& rm = (*state.running_mean)[ch];
        float& rv = (*state.running_var)[ch];
        rm = (1.0f - momentum) * rm + momentum * static_cast<float>(m);
        rv = (1.0f - momentum) * rv + momentum * static_cast<float>(unbiased);
      }
    }
  } else {
    check(state.running_mean && state.running_var,
          "batch_norm: eval mode requires running statistics");
    check(state.running_mean->numel() == c && state.running_var->numel() == c,
          "batch_norm: running stats must have ", c, " entries");
    for (int ch = 0; ch < c; ++ch) {
      mean_v[static_cast<size_t>(ch)] = (*state.running_mean)[ch];
      var_v[static_cast<size_t>(ch)] = (*state.running_var)[ch];
    }
  }

  Tensor out(tx.shape());
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  for (int s = 0; s < v.n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const float inv = 1.0f / std::sqrt(var_v[static_cast<size_t>(ch)] + eps);
      const float a = tg[ch] * inv;
      const float b2 = tb[ch] - a * mean_v[static_cast<size_t>(ch)];
      const float* src = tx.data() + (static_cast<int64_t>(s) * c + ch) * v.sp_elems;
      float* dst = out.data() + (static_cast<int64_t>(s) * c + ch) * v.sp_elems;
      for (int64_t i = 0; i < v.sp_elems; ++i) dst[i] = a * src[i] + b2;
    }

  Node nd;
  nd.value = std::move(out);
  nd.requires_grad =
      node(x).requires_grad || node(gamma).requires_grad || node(beta).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [x, gamma, beta, mode, eps, n = v.n, c, sp = v.sp_elems, per_channel,
                   mean_v = std::move(mean_v),
                   var_v = std::move(var_v)](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& tx2 = g.value(x);
      const Tensor& tg2 = g.value(gamma);
      Tensor* gx = g.grad_sink(x);
      Tensor* gg = g.grad_sink(gamma);
      Tensor* gb = g.grad_sink(beta);
      for (int ch = 0; ch < c; ++ch) {
        const double m = static_cast<double>(mean_v[static_cast<size_t>(ch)]);
        const double inv =
            1.0 / std::sqrt(static_cast<double>(var_v[static_cast<size_t>(ch)]) + eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int s = 0; s < n; ++s) {
          const int64_t base = (static_cast<int64_t>(s) * c + ch) * sp;
          for (int64_t i = 0; i < sp; ++i) {
            const double dy = static_cast<double>(go[base + i]);
            const double xhat = (static_cast<double>(tx2[base + i]) - m) * inv;
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
          }
        }
        if (gg) (*gg)[ch] += static_cast<float>(sum_dy_xhat);
        if (gb) (*gb)[ch] += static_cast<float>(sum_dy);
        if (gx) {
          const double gamma_inv = static_cast<double>(tg2[ch]) * inv;
          if (mode == BatchNormMode::kTrain) {
            const double inv_count = 1.0 / static_cast<double>(per_channel);
            for (int s = 0; s < n; ++s) {
              const int64_t base = (static_cast<int64_t>(s) * c + ch) * sp;
              for (int64_t i = 0; i < sp; ++i) {
                const double dy = static_cast<double>(go[base + i]);
                const double xhat = (static_cast<double>(tx2[base + i]) - m) * inv;
                (*gx)[base + i] += static_cast<float>(
                    gamma_inv * (dy - inv_count * (sum_dy + xhat * sum_dy_xhat)));
              }
            }
          } else {
            for (int s = 0; s < n; ++s) {
              const int64_t base = (static_cast<int64_t>(s) * c + ch) * sp;
              for (int64_t i = 0; i < sp; ++i)
                (*gx)[base + i] +=
                    static_cast<float>(gamma_inv * static_cast<double>(go[base + i]));
            }
          }
        }
      }
    };
  return emplace(std::move(nd));
}

}  // namespace snapflow

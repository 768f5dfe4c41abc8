#include <algorithm>
#include <cmath>

#include "snapflow/graph.hpp"
#include "snapflow/warp.hpp"

namespace snapflow {

namespace {

// One resolved sample point. Sample coordinates are clamped to the border;
// when a coordinate lands exactly on an integer grid line the cell to the
// left/above supplies the interpolation weights, so an all-integer flow
// reproduces source pixels without arithmetic on them.
struct TapPoint {
  int x0, x1, y0, y1;
  float fx, fy;
  bool clamped_x, clamped_y;
};

TapPoint resolve(float sx, float sy, int w, int h) {
  TapPoint t;
  t.clamped_x = sx < 0.0f || sx > static_cast<float>(w - 1);
  t.clamped_y = sy < 0.0f || sy > static_cast<float>(h - 1);
  sx = std::min(std::max(sx, 0.0f), static_cast<float>(w - 1));
  sy = std::min(std::max(sy, 0.0f), static_cast<float>(h - 1));
  t.x0 = static_cast<int>(std::floor(sx));
  t.y0 = static_cast<int>(std::floor(sy));
  t.fx = sx - static_cast<float>(t.x0);
  t.fy = sy - static_cast<float>(t.y0);
  if (t.fx == 0.0f && t.x0 > 0) {
    t.x0 -= 1;
    t.fx = 1.0f;
  }
  if (t.fy == 0.0f && t.y0 > 0) {
    t.y0 -= 1;
    t.fy = 1.0f;
  }
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  return t;
}

}  // namespace

void detail::warp_forward(const float* src, const float* flow, float* out, int n,
                          int c, int h, int w) {
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int s = 0; s < n; ++s) {
    const float* u = flow + static_cast<int64_t>(s) * 2 * hw;
    const float* v = u + hw;
    const float* sbase = src + static_cast<int64_t>(s) * c * hw;
    float* obase = out + static_cast<int64_t>(s) * c * hw;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int64_t at = static_cast<int64_t>(y) * w + x;
        const TapPoint t = resolve(static_cast<float>(x) + u[at],
                                   static_cast<float>(y) + v[at], w, h);
        const float w00 = (1.0f - t.fx) * (1.0f - t.fy);
        const float w10 = t.fx * (1.0f - t.fy);
        const float w01 = (1.0f - t.fx) * t.fy;
        const float w11 = t.fx * t.fy;
        for (int ch = 0; ch < c; ++ch) {
          const float* plane = sbase + static_cast<int64_t>(ch) * hw;
          float acc = 0.0f;
          if (w00 != 0.0f) acc += w00 * plane[static_cast<int64_t>(t.y0) * w + t.x0];
          if (w10 != 0.0f) acc += w10 * plane[static_cast<int64_t>(t.y0) * w + t.x1];
          if (w01 != 0.0f) acc += w01 * plane[static_cast<int64_t>(t.y1) * w + t.x0];
          if (w11 != 0.0f) acc += w11 * plane[static_cast<int64_t>(t.y1) * w + t.x1];
          obase[static_cast<int64_t>(ch) * hw + at] = acc;
        }
      }
  }
}

NodeId Graph::warp_bilinear(NodeId src, NodeId flow) {
  const Tensor& ts = value(src);
  const Tensor& tf = value(flow);
  check(ts.rank() == 4, "warp_bilinear: source must be (N,C,H,W), got ", ts.shape_str());
  check(tf.rank() == 4 && tf.dim(1) == 2, "warp_bilinear: flow must be (N,2,H,W), got ",
        tf.shape_str());
  check(tf.dim(0) == ts.dim(0) && tf.dim(2) == ts.dim(2) && tf.dim(3) == ts.dim(3),
        "warp_bilinear: flow ", tf.shape_str(), " does not match source ", ts.shape_str());
  const int n = ts.dim(0), c = ts.dim(1), h = ts.dim(2), w = ts.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;

  Tensor out(ts.shape());
  detail::warp_forward(ts.data(), tf.data(), out.data(), n, c, h, w);

  Node nd;
  nd.value = std::move(out);
  nd.requires_grad = node(src).requires_grad || node(flow).requires_grad;
  if (nd.requires_grad)
    nd.backprop = [src, flow, n, c, h, w, hw](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& ts2 = g.value(src);
      const Tensor& tf2 = g.value(flow);
      Tensor* gs = g.grad_sink(src);
      Tensor* gf = g.grad_sink(flow);
      for (int s = 0; s < n; ++s) {
        const float* u = tf2.data() + static_cast<int64_t>(s) * 2 * hw;
        const float* v = u + hw;
        const float* sbase = ts2.data() + static_cast<int64_t>(s) * c * hw;
        const float* gobase = go.data() + static_cast<int64_t>(s) * c * hw;
        float* gu = gf ? gf->data() + static_cast<int64_t>(s) * 2 * hw : nullptr;
        float* gv = gu ? gu + hw : nullptr;
        float* gsbase = gs ? gs->data() + static_cast<int64_t>(s) * c * hw : nullptr;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int64_t at = static_cast<int64_t>(y) * w + x;
            const TapPoint t = resolve(static_cast<float>(x) + u[at],
                                       static_cast<float>(y) + v[at], w, h);
            const float w00 = (1.0f - t.fx) * (1.0f - t.fy);
            const float w10 = t.fx * (1.0f - t.fy);
            const float w01 = (1.0f - t.fx) * t.fy;
            const float w11 = t.fx * t.fy;
            float du = 0.0f, dv = 0.0f;
            for (int ch = 0; ch < c; ++ch) {
              const float dy = gobase[static_cast<int64_t>(ch) * hw + at];
              if (dy == 0.0f && !gf) continue;
              const float* plane = sbase + static_cast<int64_t>(ch) * hw;
              const int64_t i00 = static_cast<int64_t>(t.y0) * w + t.x0;
              const int64_t i10 = static_cast<int64_t>(t.y0) * w + t.x1;
              const int64_t i01 = static_cast<int64_t>(t.y1) * w + t.x0;
              const int64_t i11 = static_cast<int64_t>(t.y1) * w + t.x1;
              if (gsbase) {
                float* gplane = gsbase + static_cast<int64_t>(ch) * hw;
                if (w00 != 0.0f) gplane[i00] += dy * w00;
                if (w10 != 0.0f) gplane[i10] += dy * w10;
                if (w01 != 0.0f) gplane[i01] += dy * w01;
                if (w11 != 0.0f) gplane[i11] += dy * w11;
              }
              if (gf) {
                const float dx_slope = (1.0f - t.fy) * (plane[i10] - plane[i00]) +
                                       t.fy * (plane[i11] - plane[i01]);
                const float dy_slope = (1.0f - t.fx) * (plane[i01] - plane[i00]) +
                                       t.fx * (plane[i11] - plane[i10]);
                du += dy * dx_slope;
                dv += dy * dy_slope;
              }
            }
            if (gf) {
              if (!t.clamped_x) gu[at] += du;
              if (!t.clamped_y) gv[at] += dv;
            }
          }
      }
    };
  return emplace(std::move(nd));
}

}  // namespace snapflow

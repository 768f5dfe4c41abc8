#include <cblas.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "snapflow/graph.hpp"

namespace snapflow {

namespace {

// Geometry of one convolution, spatial rank 2 or 3. Output extents use floor
// division, matching the usual convention.
struct ConvPlan {
  int n, ci, co;
  std::vector<int> in;      // spatial extents of x
  std::vector<int> k;       // kernel extents
  std::vector<int> stride;
  std::vector<int> pad;
  std::vector<int> out;     // spatial extents of y
  int64_t in_spatial = 1, out_spatial = 1, kernel_spatial = 1;

  int64_t col_rows() const { return ci * kernel_spatial; }
  int64_t col_cols() const { return out_spatial; }
};

ConvPlan make_plan(const Tensor& x, const Tensor& w, const std::vector<int>& stride,
                   const std::vector<int>& padding) {
  const int rank = x.rank();
  check(rank == 4 || rank == 5, "convolve: input must be (N,C,H,W) or (N,C,D,H,W), got ",
        x.shape_str());
  const int sd = rank - 2;
  check(w.rank() == rank, "convolve: weight rank ", w.rank(), " does not match input ",
        x.shape_str());
  check(static_cast<int>(stride.size()) == sd && static_cast<int>(padding.size()) == sd,
        "convolve: need ", sd, " stride and padding entries");
  check(w.dim(1) == x.dim(1), "convolve: channel mismatch, input ", x.shape_str(),
        " weight ", w.shape_str());

  ConvPlan p;
  p.n = x.dim(0);
  p.ci = x.dim(1);
  p.co = w.dim(0);
  p.stride = stride;
  p.pad = padding;
  for (int i = 0; i < sd; ++i) {
    p.in.push_back(x.dim(2 + i));
    p.k.push_back(w.dim(2 + i));
    check(stride[static_cast<size_t>(i)] > 0, "convolve: stride must be positive");
    check(padding[static_cast<size_t>(i)] >= 0, "convolve: padding must be non-negative");
    const int span = p.in.back() + 2 * padding[static_cast<size_t>(i)] - p.k.back();
    check(span >= 0, "convolve: kernel larger than padded input on axis ", i);
    p.out.push_back(span / stride[static_cast<size_t>(i)] + 1);
    p.in_spatial *= p.in.back();
    p.out_spatial *= p.out.back();
    p.kernel_spatial *= p.k.back();
  }
  return p;
}

// Scratch buffers shared across convolve calls; grown on demand.
thread_local std::vector<float> g_col;
thread_local std::vector<float> g_dcol;

float* scratch(std::vector<float>& buf, int64_t n) {
  if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
  return buf.data();
}

// Unrolls one sample (C, spatial...) into a (ci*kernel, out_spatial) matrix,
// zero-filling positions that fall in the padding.
void im2col(const float* x, const ConvPlan& p, float* col) {
  const int sd = static_cast<int>(p.in.size());
  const int kt = sd == 3 ? p.k[0] : 1;
  const int kh = p.k[sd - 2], kw = p.k[sd - 1];
  const int it = sd == 3 ? p.in[0] : 1;
  const int ih = p.in[sd - 2], iw = p.in[sd - 1];
  const int ot = sd == 3 ? p.out[0] : 1;
  const int oh = p.out[sd - 2], ow = p.out[sd - 1];
  const int st = sd == 3 ? p.stride[0] : 1;
  const int sh = p.stride[sd - 2], sw = p.stride[sd - 1];
  const int pt = sd == 3 ? p.pad[0] : 0;
  const int ph = p.pad[sd - 2], pw = p.pad[sd - 1];

  float* dst = col;
  for (int c = 0; c < p.ci; ++c) {
    const float* xc = x + static_cast<int64_t>(c) * p.in_spatial;
    for (int dt = 0; dt < kt; ++dt)
      for (int dh = 0; dh < kh; ++dh)
        for (int dw = 0; dw < kw; ++dw) {
          for (int t = 0; t < ot; ++t) {
            const int src_t = t * st + dt - pt;
            const bool t_ok = src_t >= 0 && src_t < it;
            for (int h = 0; h < oh; ++h) {
              const int src_h = h * sh + dh - ph;
              if (!t_ok || src_h < 0 || src_h >= ih) {
                std::memset(dst, 0, sizeof(float) * static_cast<size_t>(ow));
                dst += ow;
                continue;
              }
              const float* row =
                  xc + (static_cast<int64_t>(src_t) * ih + src_h) * iw;
              const int first = dw - pw;  // source column of output column 0
              if (sw == 1) {
                const int lo = std::min(ow, std::max(0, -first));
                const int hi = std::max(lo, std::min(ow, iw - first));
                if (lo > 0) std::memset(dst, 0, sizeof(float) * static_cast<size_t>(lo));
                if (hi > lo)
                  std::memcpy(dst + lo, row + first + lo,
                              sizeof(float) * static_cast<size_t>(hi - lo));
                if (hi < ow)
                  std::memset(dst + hi, 0, sizeof(float) * static_cast<size_t>(ow - hi));
                dst += ow;
              } else {
                for (int wo = 0; wo < ow; ++wo) {
                  const int src_w = wo * sw + first;
                  *dst++ = (src_w >= 0 && src_w < iw) ? row[src_w] : 0.0f;
                }
              }
            }
          }
        }
  }
}

// Scatters a column matrix back onto one sample, accumulating.
void col2im_add(const float* col, const ConvPlan& p, float* dx) {
  const int sd = static_cast<int>(p.in.size());
  const int kt = sd == 3 ? p.k[0] : 1;
  const int kh = p.k[sd - 2], kw = p.k[sd - 1];
  const int it = sd == 3 ? p.in[0] : 1;
  const int ih = p.in[sd - 2], iw = p.in[sd - 1];
  const int ot = sd == 3 ? p.out[0] : 1;
  const int oh = p.out[sd - 2], ow = p.out[sd - 1];
  const int st = sd == 3 ? p.stride[0] : 1;
  const int sh = p.stride[sd - 2], sw = p.stride[sd - 1];
  const int pt = sd == 3 ? p.pad[0] : 0;
  const int ph = p.pad[sd - 2], pw = p.pad[sd - 1];

  const float* src = col;
  for (int c = 0; c < p.ci; ++c) {
    float* xc = dx + static_cast<int64_t>(c) * p.in_spatial;
    for (int dt = 0; dt < kt; ++dt)
      for (int dh = 0; dh < kh; ++dh)
        for (int dw = 0; dw < kw; ++dw) {
          for (int t = 0; t < ot; ++t) {
            const int src_t = t * st + dt - pt;
            const bool t_ok = src_t >= 0 && src_t < it;
            for (int h = 0; h < oh; ++h) {
              const int src_h = h * sh + dh - ph;
              if (!t_ok || src_h < 0 || src_h >= ih) {
                src += ow;
                continue;
              }
              float* row = xc + (static_cast<int64_t>(src_t) * ih + src_h) * iw;
              const int first = dw - pw;
              for (int wo = 0; wo < ow; ++wo) {
                const int src_w = wo * sw + first;
                if (src_w >= 0 && src_w < iw) row[src_w] += src[wo];
              }
              src += ow;
            }
          }
        }
  }
}

}  // namespace

NodeId Graph::convolve(NodeId x, NodeId w, NodeId b, std::vector<int> stride,
                       std::vector<int> padding) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const ConvPlan p = make_plan(tx, tw, stride, padding);
  const bool has_bias = b >= 0;
  if (has_bias) {
    const Tensor& tb = value(b);
    check(tb.rank() == 1 && tb.dim(0) == p.co, "convolve: bias must be (", p.co,
          "), got ", tb.shape_str());
  }

  std::vector<int> out_shape = {p.n, p.co};
  out_shape.insert(out_shape.end(), p.out.begin(), p.out.end());
  Tensor out(out_shape);

  const int64_t K = p.col_rows(), M = p.col_cols();
  float* col = scratch(g_col, K * M);
  for (int s = 0; s < p.n; ++s) {
    const float* xs = tx.data() + static_cast<int64_t>(s) * p.ci * p.in_spatial;
    float* ys = out.data() + static_cast<int64_t>(s) * p.co * p.out_spatial;
    im2col(xs, p, col);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, p.co, static_cast<int>(M),
                static_cast<int>(K), 1.0f, tw.data(), static_cast<int>(K), col,
                static_cast<int>(M), 0.0f, ys, static_cast<int>(M));
    if (has_bias) {
      const Tensor& tb = value(b);
      for (int c = 0; c < p.co; ++c) {
        float* row = ys + static_cast<int64_t>(c) * p.out_spatial;
        const float bias = tb[c];
        for (int64_t i = 0; i < p.out_spatial; ++i) row[i] += bias;
      }
    }
  }

  Node nd;
  nd.value = std::move(out);
  nd.requires_grad =
      node(x).requires_grad || node(w).requires_grad || (has_bias && node(b).requires_grad);
  if (nd.requires_grad)
    nd.backprop = [x, w, b, p, has_bias](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& tx2 = g.value(x);
      const Tensor& tw2 = g.value(w);
      const int64_t K2 = p.col_rows(), M2 = p.col_cols();
      Tensor* gx = g.grad_sink(x);
      Tensor* gw = g.grad_sink(w);
      Tensor* gb = has_bias ? g.grad_sink(b) : nullptr;
      float* col2 = (gw != nullptr) ? scratch(g_col, K2 * M2) : nullptr;
      float* dcol = (gx != nullptr) ? scratch(g_dcol, K2 * M2) : nullptr;
      for (int s = 0; s < p.n; ++s) {
        const float* dys = go.data() + static_cast<int64_t>(s) * p.co * p.out_spatial;
        if (gw) {
          im2col(tx2.data() + static_cast<int64_t>(s) * p.ci * p.in_spatial, p, col2);
          cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, p.co, static_cast<int>(K2),
                      static_cast<int>(M2), 1.0f, dys, static_cast<int>(M2), col2,
                      static_cast<int>(M2), 1.0f, gw->data(), static_cast<int>(K2));
        }
        if (gx) {
          cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K2),
                      static_cast<int>(M2), p.co, 1.0f, tw2.data(), static_cast<int>(K2),
                      dys, static_cast<int>(M2), 0.0f, dcol, static_cast<int>(M2));
          col2im_add(dcol, p, gx->data() + static_cast<int64_t>(s) * p.ci * p.in_spatial);
        }
        if (gb) {
          for (int c = 0; c < p.co; ++c) {
            const float* row = dys + static_cast<int64_t>(c) * p.out_spatial;
            double acc = 0.0;
            for (int64_t i = 0; i < p.out_spatial; ++i) acc += static_cast<double>(row[i]);
            (*gb)[c] += static_cast<float>(acc);
          }
        }
      }
    };
  return emplace(std::move(nd));
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  check(tx.rank() == 2, "linear: input must be (N,K), got ", tx.shape_str());
  check(tw.rank() == 2 && tw.dim(1) == tx.dim(1), "linear: weight must be (Co,",
        tx.dim(1), "), got ", tw.shape_str());
  const int n = tx.dim(0), k = tx.dim(1), co = tw.dim(0);
  const bool has_bias = b >= 0;
  if (has_bias)
    check(value(b).rank() == 1 && value(b).dim(0) == co, "linear: bias must be (", co,
          "), got ", value(b).shape_str());

  Tensor out({n, co});
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, co, k, 1.0f, tx.data(), k,
              tw.data(), k, 0.0f, out.data(), co);
  if (has_bias) {
    const Tensor& tb = value(b);
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < co; ++c) out[static_cast<int64_t>(s) * co + c] += tb[c];
  }

  Node nd;
  nd.value = std::move(out);
  nd.requires_grad =
      node(x).requires_grad || node(w).requires_grad || (has_bias && node(b).requires_grad);
  if (nd.requires_grad)
    nd.backprop = [x, w, b, n, k, co, has_bias](Graph& g, NodeId self) {
      const Tensor& go = g.node(self).grad;
      if (Tensor* gx = g.grad_sink(x))
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, k, co, 1.0f, go.data(),
                    co, g.value(w).data(), k, 1.0f, gx->data(), k);
      if (Tensor* gw = g.grad_sink(w))
        cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, co, k, n, 1.0f, go.data(),
                    co, g.value(x).data(), k, 1.0f, gw->data(), k);
      if (has_bias)
        if (Tensor* gb = g.grad_sink(b))
          for (int c = 0; c < co; ++c) {
            double acc = 0.0;
            for (int s = 0; s < n; ++s)
              acc += static_cast<double>(go[static_cast<int64_t>(s) * co + c]);
            (*gb)[c] += static_cast<float>(acc);
          }
    };
  return emplace(std::move(nd));
}

}  // namespace snapflow

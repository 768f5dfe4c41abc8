#pragma once

#include <vector>

#include "snapflow/tensor.hpp"

namespace snapflow {

// Value-level backward warping. Layouts: frames are (C,H,W), flow fields are
// (2,H,W) with channel 0 = dx (positive right) and channel 1 = dy (positive
// down), both in pixels. Batched variants take a leading N axis.
//
// out(x) = source(x + flow(x)), bilinear, sample coordinates clamped to the
// source border. A zero flow reproduces the source bit-exactly.

// source (C,H,W) or (N,C,H,W); flow (2,H,W) or (N,2,H,W) to match.
Tensor bilinear_sample(const Tensor& source, const Tensor& flow);

// reference (C,H,W), flows (T,2,H,W); returns T warped frames.
std::vector<Tensor> warp_sequence(const Tensor& reference, const Tensor& flows);

namespace detail {
// Shared kernel; src (n,c,h,w), flow (n,2,h,w), out like src.
void warp_forward(const float* src, const float* flow, float* out, int n, int c,
                  int h, int w);
}  // namespace detail

}  // namespace snapflow

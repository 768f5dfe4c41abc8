#pragma once

#include <utility>

#include "snapflow/tensor.hpp"

namespace snapflow {

// Forward-backward flow consistency. Flow fields are (2,H,W) in pixels.
// Masks are (1,H,W) with values exactly 0 (occluded) or 1 (visible); they are
// plain values, never part of a differentiation tape.

// Delta(x) = primary(x) + bilinear_sample(secondary, primary)(x).
// With (fwd, bwd) the residual lives on the reference grid, with (bwd, fwd)
// on the target grid.
Tensor cycle_residual(const Tensor& primary, const Tensor& secondary);

struct MaskPair {
  Tensor reference;  // aligned with the reference frame
  Tensor target;     // aligned with the warped-to frame
};

// A pixel is visible iff |Delta(x)|_1 < max(alpha, beta * (|primary(x)|_1 +
// |sampled secondary(x)|_1)), strict inequality.
MaskPair visibility_masks(const Tensor& fwd, const Tensor& bwd, float alpha = 1.0f,
                          float beta = 0.1f);

}  // namespace snapflow

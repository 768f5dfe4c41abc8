#pragma once

#include <vector>

#include "snapflow/tensor.hpp"

namespace snapflow {

// Peak signal-to-noise ratio in dB for images in [0,1]; identical inputs
// (MSE = 0) report the 99 dB cap.
double psnr(const Tensor& a, const Tensor& b);

// Mean structural similarity over valid 11x11 windows (Gaussian weights,
// sigma 1.5), averaged across channels. Inputs are (C,H,W) in [0,1] with
// H, W >= 11.
double ssim(const Tensor& a, const Tensor& b);

struct SequenceScore {
  double psnr = 0.0;
  double ssim = 0.0;
};

// Frame-averaged scores of one candidate sequence against the reference.
SequenceScore score_sequence(const std::vector<Tensor>& candidate,
                             const std::vector<Tensor>& reference);

// Best frame-averaged score over K candidate sequences; psnr and ssim are
// maximized independently.
SequenceScore best_of_k(const std::vector<std::vector<Tensor>>& candidates,
                        const std::vector<Tensor>& reference);

}  // namespace snapflow

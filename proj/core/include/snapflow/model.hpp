#pragma once

#include <cstdint>
#include <vector>

#include "snapflow/graph.hpp"
#include "snapflow/nn.hpp"
#include "snapflow/param_store.hpp"
#include "snapflow/rng.hpp"

namespace snapflow {

// Architecture hyperparameters. The reference layout is 128x128 with T=8;
// smaller images drop one encoder/fusion level per halving and every filter
// count scales by channel_scale (floored at 4 channels).
struct ModelConfig {
  int image_size = 64;
  int frames = 4; // T, the number of generated flow steps
  float channel_scale = 0.125f;
  uint64_t seed = 17;

  void validate() const; // power-of-two size >= 32, frames >= 1, scale > 0

  int levels() const;        // stride-2 stages; log2(image_size) - 2
  int scaled(int full) const;
  int z_dim() const;         // scaled(1024)
  // The generated volume starts at base_time() time slices and doubles during
  // the first time_doublings() upsampling stages to reach frames.
  int time_doublings() const;
  int base_time() const;
};

// The four networks: motion encoder (posterior over z), image encoder
// (content features), bi-directional flow generator and the occlusion-aware
// synthesis net. All parameters live in one store; batch-norm running
// statistics update in place during training-mode passes.
class VideoModel {
 public:
  explicit VideoModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct LatentGaussian {
    NodeId mu, log_var; // each (N, D_z)
  };
  struct ContentFeatures {
    std::vector<NodeId> levels; // levels[i]: (N,C_i,size/2^(i+1),same)
    NodeId global;              // (N, D_z, 1, 1)
  };
  struct FlowVolumes {
    NodeId forward, backward; // each (N,2,T,H,W)
  };

  // clip: (N,3,T+1,H,W) with the reference frame first along time.
  LatentGaussian encode_motion(Graph& g, NodeId clip, BatchNormMode mode);
  ContentFeatures encode_image(Graph& g, NodeId reference, BatchNormMode mode);
  // z = mu + exp(0.5*log_var) * epsilon; epsilon: (N, D_z) from the caller.
  NodeId reparameterize(Graph& g, const LatentGaussian& latent,
                        const Tensor& epsilon);
  FlowVolumes generate_flows(Graph& g, NodeId z, const ContentFeatures& content,
                             BatchNormMode mode);
  // warped: (N,3,H,W), mask: (N,1,H,W). Occluded inputs are filled with 0.5
  // and the mask rides along as a fourth channel.
  NodeId synthesize_frame(Graph& g, NodeId warped, NodeId mask,
                          BatchNormMode mode);

  struct TrainingPass {
    LatentGaussian latent;
    NodeId z;
    FlowVolumes flows;
    std::vector<NodeId> forward_slices, backward_slices; // T x (N,2,H,W)
    std::vector<Tensor> mask_reference, mask_target;     // T x (N,1,H,W), {0,1}
    NodeId reference;             // I_0 as a constant node
    std::vector<NodeId> targets;  // I_t constants, t = 1..T
    std::vector<NodeId> warped_target, refined_target;       // t from 0
    std::vector<NodeId> warped_reference, refined_reference; // 0 from t
  };
  // clip: (N,3,T+1,H,W); epsilon: (N,D_z). Visibility masks are computed
  // from the generated flow values and enter the tape as constants.
  TrainingPass forward_training_pass(Graph& g, const Tensor& clip,
                                     const Tensor& epsilon);

  struct SampleResult {
    std::vector<Tensor> frames;                         // T x (3,H,W) in [0,1]
    std::vector<Tensor> forward_flow, backward_flow;    // T x (2,H,W)
    std::vector<Tensor> visible_reference, visible_target; // T x (1,H,W)
  };
  // Test-time pass: z from the prior (or given), synthesis sees only the
  // backward warp and its target-side visibility mask.
  SampleResult sample(const Tensor& reference, const Tensor& z);
  std::vector<Tensor> sample_sequence(const Tensor& reference, const Tensor& z);
  std::vector<Tensor> sample_sequence(const Tensor& reference, uint64_t seed);

  // Feeds each refined frame back as the next reference. Only valid for
  // models trained with frames == 1.
  std::vector<Tensor> iterative_rollout(const Tensor& reference, int steps,
                                        uint64_t seed);

  Tensor draw_prior(Rng& rng, int batch) const; // (batch, D_z) standard normal

 private:
  struct ConvBlock {
    nn::Conv conv;
    nn::BatchNorm bn;
  };
  NodeId block(Graph& g, const ConvBlock& b, NodeId x, BatchNormMode mode);
  NodeId synthesis_network(Graph& g, NodeId input, BatchNormMode mode);
  int scaled_level(int stage) const; // encoder stage width, deepest widest

  ModelConfig config_;
  ParamStore params_;

  std::vector<ConvBlock> content_stages_;
  ConvBlock content_global_;
  std::vector<ConvBlock> motion_stages_;
  nn::Conv motion_mu_, motion_log_var_;
  nn::Linear gen_seed_;
  nn::BatchNorm gen_seed_bn_;
  std::vector<ConvBlock> gen_fusion_, gen_upconv_, gen_video_;
  nn::Conv gen_output_;
  std::vector<ConvBlock> synth_encoder_, synth_decoder_;
  nn::Conv synth_output_;
};

}  // namespace snapflow

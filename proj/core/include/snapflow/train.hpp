#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snapflow/adam.hpp"
#include "snapflow/config.hpp"
#include "snapflow/losses.hpp"
#include "snapflow/model.hpp"

namespace snapflow {

ModelConfig model_config_from(const RunConfig& config);
LossWeights loss_weights_from(const RunConfig& config);

// Assembles the per-step objective from a completed forward pass: KL on the
// posterior, photometric and cycle terms on the flows, perceptual distance
// for all 2T refined frames and total variation averaged over the 2T flow
// slices plus the 2T refined frames.
ObjectiveParts build_objective(Graph& g, const VideoModel::TrainingPass& pass,
                               const FeaturePyramid& pyramid,
                               const LossWeights& weights);

// Checkpoints hold every model parameter, the optimizer moments under an
// "__opt." prefix and the run configuration plus step count as text.
void save_checkpoint(const std::string& path, const VideoModel& model,
                     const Adam& optimizer, const RunConfig& config,
                     int64_t step);

struct CheckpointHeader {
  RunConfig config;
  int64_t step = 0;
};

// Reads just the recorded configuration, enough to rebuild the model.
CheckpointHeader read_checkpoint_header(const std::string& path);

// Restores parameters, and optimizer moments when optimizer is non-null.
CheckpointHeader load_checkpoint(const std::string& path, VideoModel& model,
                                 Adam* optimizer = nullptr);

struct TrainOptions {
  std::string run_dir;      // checkpoints land here; empty writes none
  std::string resume_from;  // checkpoint restored before the first step
  std::function<void(const std::string&)> log;  // default prints to stdout
};

struct TrainResult {
  std::vector<LossReport> history;  // one report per step taken in this call
  int64_t first_step = 0;           // 0 fresh, checkpoint step on resume
  std::string final_checkpoint;     // empty when run_dir is empty
};

// Optimizes the model on the train split under config.data_root for
// config.steps total steps. Batches and noise are drawn from a stream keyed
// by (seed, step), so a resumed run continues the exact fresh-run trajectory.
// A non-finite loss aborts before the parameters are touched, leaving the
// last checkpoint on disk as the recovery point.
TrainResult train_model(VideoModel& model, const RunConfig& config,
                        const TrainOptions& options = {});

}  // namespace snapflow

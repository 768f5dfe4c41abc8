#include "snapflow/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>

#include "snapflow/data.hpp"
#include "snapflow/io.hpp"

namespace snapflow {

namespace {

constexpr uint64_t kBatchStream = 0x62617463686573ull;

CheckpointHeader header_from(const std::map<std::string, std::string>& kv,
                             const std::string& origin) {
  CheckpointHeader header;
  bool saw_step = false;
  for (const auto& [key, value] : kv) {
    if (key == "step") {
      header.step = std::strtoll(value.c_str(), nullptr, 10);
      saw_step = true;
    } else {
      header.config.apply(key, value);
    }
  }
  check(saw_step, origin, ": checkpoint records no step");
  header.config.validate();
  return header;
}

std::string checkpoint_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06lld.ckpt",
                static_cast<long long>(step));
  return buf;
}

}  // namespace

ModelConfig model_config_from(const RunConfig& config) {
  ModelConfig mc;
  mc.image_size = config.image_size;
  mc.frames = config.frames;
  mc.channel_scale = config.channel_scale;
  mc.seed = config.seed;
  return mc;
}

LossWeights loss_weights_from(const RunConfig& config) {
  LossWeights w;
  w.bi_vc = config.loss_photometric;
  w.cc = config.loss_cycle;
  w.pp = config.loss_perceptual;
  w.tv = config.loss_smoothness;
  return w;
}

ObjectiveParts build_objective(Graph& g, const VideoModel::TrainingPass& pass,
                               const FeaturePyramid& pyramid,
                               const LossWeights& weights) {
  ObjectiveParts parts;
  parts.kl = kl_divergence_std_normal(g, pass.latent.mu, pass.latent.log_var);
  parts.bi_vc.push_back(loss_bidirectional_photometric(
      g, pass.reference, pass.targets, pass.forward_slices,
      pass.backward_slices, pass.mask_reference, pass.mask_target));
  parts.cc.push_back(loss_cycle_consistency(g, pass.forward_slices,
                                            pass.backward_slices,
                                            pass.mask_reference,
                                            pass.mask_target));

  const size_t tcount = pass.targets.size();
  NodeId pp{};
  NodeId tv{};
  for (size_t t = 0; t < tcount; ++t) {
    NodeId a = loss_perceptual(g, pass.refined_target[t], pass.targets[t],
                               pyramid, weights.pp_feature);
    NodeId b = loss_perceptual(g, pass.refined_reference[t], pass.reference,
                               pyramid, weights.pp_feature);
    pp = t == 0 ? g.add(a, b) : g.add(pp, g.add(a, b));

    NodeId step_tv = g.add(g.add(tv_l1(g, pass.forward_slices[t]),
                                 tv_l1(g, pass.backward_slices[t])),
                           g.add(tv_l1(g, pass.refined_target[t]),
                                 tv_l1(g, pass.refined_reference[t])));
    tv = t == 0 ? step_tv : g.add(tv, step_tv);
  }
  parts.pp.push_back(pp);
  parts.tv = g.scale(tv, 1.0f / (4.0f * static_cast<float>(tcount)));
  return parts;
}

void save_checkpoint(const std::string& path, const VideoModel& model,
                     const Adam& optimizer, const RunConfig& config,
                     int64_t step) {
  std::map<std::string, Tensor> entries;
  for (const auto& [name, entry] : model.params())
    entries.emplace(name, entry.tensor);
  for (const auto& [name, tensor] : optimizer.export_state())
    entries.emplace("__opt." + name, tensor);
  std::map<std::string, std::string> kv = config.as_map();
  kv["step"] = std::to_string(step);
  checkpoint_write(path, entries, kv);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  return header_from(checkpoint_read(path).config, path);
}

CheckpointHeader load_checkpoint(const std::string& path, VideoModel& model,
                                 Adam* optimizer) {
  Checkpoint ckpt = checkpoint_read(path);
  CheckpointHeader header = header_from(ckpt.config, path);

  Checkpoint params_only;
  std::map<std::string, Tensor> opt_state;
  for (auto& [name, tensor] : ckpt.entries) {
    if (name.rfind("__opt.", 0) == 0)
      opt_state.emplace(name.substr(6), std::move(tensor));
    else
      params_only.entries.emplace(name, std::move(tensor));
  }
  load_into_store(params_only, model.params());
  if (optimizer) optimizer->import_state(opt_state);
  return header;
}

TrainResult train_model(VideoModel& model, const RunConfig& config,
                        const TrainOptions& options) {
  config.validate();
  const ModelConfig& mc = model.config();
  check(mc.image_size == config.image_size && mc.frames == config.frames,
        "model was built for ", mc.image_size, "px/T=", mc.frames,
        ", config wants ", config.image_size, "px/T=", config.frames);
  check(!config.data_root.empty(), "config has no data_root");

  auto log = options.log;
  if (!log) log = [](const std::string& line) { std::cout << line << std::endl; };

  const std::vector<std::vector<Tensor>> sequences =
      read_dataset_frames(config.data_root, "train");
  check(!sequences.empty(), "train split under ", config.data_root, " is empty");
  check(static_cast<int>(sequences.front().size()) == config.frames + 1,
        "dataset sequences have ", sequences.front().size(),
        " frames, config wants ", config.frames + 1);
  const Tensor& probe = sequences.front().front();
  check(probe.dim(1) == config.image_size && probe.dim(2) == config.image_size,
        "dataset frames are ", probe.shape_str(), ", config wants ",
        config.image_size, "x", config.image_size);

  Adam optimizer(config.learning_rate);
  TrainResult result;
  if (!options.resume_from.empty()) {
    CheckpointHeader header = load_checkpoint(options.resume_from, model,
                                              &optimizer);
    check(header.config.image_size == config.image_size &&
              header.config.frames == config.frames &&
              header.config.channel_scale == config.channel_scale,
          options.resume_from, ": checkpoint architecture does not match the "
          "requested configuration");
    result.first_step = header.step;
    optimizer.set_learning_rate(config.learning_rate);
  }
  check(result.first_step <= config.steps, "checkpoint is already at step ",
        result.first_step, ", config.steps is ", config.steps);

  if (!options.run_dir.empty())
    std::filesystem::create_directories(options.run_dir);

  const FeaturePyramid pyramid;
  const LossWeights weights = loss_weights_from(config);
  const Rng batch_base = Rng(config.seed).split(kBatchStream);

  const int n = config.batch_size;
  const int tc = config.frames + 1;
  const int h = config.image_size, w = config.image_size;
  const int64_t hw = static_cast<int64_t>(h) * w;
  int64_t last_saved = -1;

  for (int64_t step = result.first_step + 1; step <= config.steps; ++step) {
    Rng rng = batch_base.split(static_cast<uint64_t>(step));
    Tensor clip({n, 3, tc, h, w});
    for (int s = 0; s < n; ++s) {
      const auto& frames =
          sequences[static_cast<size_t>(rng.uniform_int(
              0, static_cast<int>(sequences.size()) - 1))];
      for (int t = 0; t < tc; ++t)
        for (int c = 0; c < 3; ++c)
          std::memcpy(clip.data() + (((s * 3 + c) * tc) + t) * hw,
                      frames[static_cast<size_t>(t)].data() + c * hw,
                      hw * sizeof(float));
    }
    Tensor epsilon({n, mc.z_dim()});
    for (int64_t i = 0; i < epsilon.numel(); ++i)
      epsilon[i] = static_cast<float>(rng.normal());

    Graph g;
    VideoModel::TrainingPass pass = model.forward_training_pass(g, clip, epsilon);
    ObjectiveParts parts = build_objective(g, pass, pyramid, weights);
    NodeId total = total_objective(g, parts, weights);
    LossReport report = make_loss_report(g, parts, total, weights);
    check(std::isfinite(report.total), "training diverged: non-finite loss at "
          "step ", step, "; the last saved checkpoint is intact");
    g.backward(total);
    optimizer.step(model.params(), g.param_grads());
    result.history.push_back(report);

    if (config.log_every > 0 && step % config.log_every == 0)
      log(report.log_line(step));
    if (!options.run_dir.empty() && config.checkpoint_every > 0 &&
        step % config.checkpoint_every == 0) {
      result.final_checkpoint =
          (std::filesystem::path(options.run_dir) / checkpoint_name(step))
              .string();
      save_checkpoint(result.final_checkpoint, model, optimizer, config, step);
      last_saved = step;
    }
  }

  if (!options.run_dir.empty() && last_saved != config.steps) {
    result.final_checkpoint =
        (std::filesystem::path(options.run_dir) / checkpoint_name(config.steps))
            .string();
    save_checkpoint(result.final_checkpoint, model, optimizer, config,
                    config.steps);
  }
  return result;
}

}  // namespace snapflow

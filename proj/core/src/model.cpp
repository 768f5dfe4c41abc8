#include "snapflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "snapflow/occlusion.hpp"

namespace snapflow {

namespace {

// Filter count of the reference layout at fusion level j (1 = deepest):
// 512, 256, 128, then 64 from level 4 on. The image and motion encoders use
// the same widths mirrored, so one helper covers all three networks.
int full_width(int level) { return std::max(512 >> (level - 1), 64); }

Tensor clamp_unit(const Tensor& t) {
  Tensor out = t;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::clamp(out[i], 0.0f, 1.0f);
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  check(image_size >= 32 && (image_size & (image_size - 1)) == 0,
        "image_size must be a power of two >= 32, got ", image_size);
  check(frames >= 1, "frames must be at least 1, got ", frames);
  check(channel_scale > 0.0f, "channel_scale must be positive");
}

int ModelConfig::levels() const {
  int l = 0;
  for (int s = image_size; s > 4; s /= 2) ++l;
  return l;
}

int ModelConfig::scaled(int full) const {
  return std::max(4, static_cast<int>(std::lround(full * channel_scale)));
}

int ModelConfig::z_dim() const { return scaled(1024); }

int ModelConfig::time_doublings() const {
  int v = 0;
  for (int f = frames; v < 2 && f % 2 == 0; f /= 2) ++v;
  return v;
}

int ModelConfig::base_time() const { return frames >> time_doublings(); }

VideoModel::VideoModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int levels = config_.levels();
  const int dz = config_.z_dim();

  auto conv_block = [&](const std::string& prefix, int ci, int co,
                        std::vector<int> kernel, std::vector<int> stride,
                        std::vector<int> padding) {
    ConvBlock b;
    b.conv = nn::make_conv(params_, prefix, ci, co, std::move(kernel),
                           std::move(stride), std::move(padding), rng);
    b.bn = nn::make_batch_norm(params_, prefix + ".bn", co);
    return b;
  };

  int prev = 3;
  for (int i = 0; i < levels; ++i) {
    const int co = scaled_level(i);
    content_stages_.push_back(conv_block("content.stage" + std::to_string(i),
                                         prev, co, {4, 4}, {2, 2}, {1, 1}));
    prev = co;
  }
  content_global_ =
      conv_block("content.global", prev, dz, {4, 4}, {1, 1}, {0, 0});

  prev = 3;
  for (int i = 0; i < levels; ++i) {
    const int co = scaled_level(i);
    motion_stages_.push_back(conv_block("motion.stage" + std::to_string(i), prev,
                                        co, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}));
    prev = co;
  }
  const std::vector<int> head_kernel = {config_.frames + 1, 4, 4};
  motion_mu_ = nn::make_conv(params_, "motion.mu", prev, dz, head_kernel,
                             {1, 1, 1}, {0, 0, 0}, rng);
  motion_log_var_ = nn::make_conv(params_, "motion.log_var", prev, dz,
                                  head_kernel, {1, 1, 1}, {0, 0, 0}, rng);

  const int seed_ch = config_.scaled(full_width(1));
  gen_seed_ = nn::make_linear(params_, "gen.seed", dz,
                              seed_ch * config_.base_time() * 16, rng);
  gen_seed_bn_ = nn::make_batch_norm(params_, "gen.seed.bn", seed_ch);
  for (int j = 1; j <= levels; ++j) {
    const int cj = config_.scaled(full_width(j));
    const int cn = config_.scaled(full_width(j + 1));
    gen_fusion_.push_back(conv_block("gen.fusion" + std::to_string(j), 2 * cj,
                                     cj, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}));
    gen_upconv_.push_back(conv_block("gen.upconv" + std::to_string(j), cj, cn,
                                     {3, 3, 3}, {1, 1, 1}, {1, 1, 1}));
    if (j < levels)
      gen_video_.push_back(conv_block("gen.video" + std::to_string(j + 1), cn,
                                      cn, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}));
  }
  gen_output_ = nn::make_conv(params_, "gen.output",
                              config_.scaled(full_width(levels + 1)), 4,
                              {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);

  const float synth_scale = std::min(1.0f, 4.0f * config_.channel_scale);
  auto synth_width = [&](int k) {
    return std::max(4, static_cast<int>(std::lround((64 << (k - 1)) * synth_scale)));
  };
  prev = 4;
  for (int k = 1; k <= 4; ++k) {
    synth_encoder_.push_back(conv_block("synth.enc" + std::to_string(k), prev,
                                        synth_width(k), {3, 3}, {1, 1}, {1, 1}));
    prev = synth_width(k);
  }
  for (int k = 3; k >= 1; --k) {
    synth_decoder_.push_back(conv_block("synth.dec" + std::to_string(k), prev,
                                        synth_width(k), {3, 3}, {1, 1}, {1, 1}));
    prev = synth_width(k);
  }
  synth_output_ = nn::make_conv(params_, "synth.out", prev, 3, {3, 3}, {1, 1},
                                {1, 1}, rng);
}

int VideoModel::scaled_level(int stage) const {
  return config_.scaled(full_width(config_.levels() - stage));
}

NodeId VideoModel::block(Graph& g, const ConvBlock& b, NodeId x,
                         BatchNormMode mode) {
  x = b.conv(g, params_, x);
  x = b.bn(g, params_, x, mode);
  return g.leaky_relu(x, 0.2f);
}

VideoModel::ContentFeatures VideoModel::encode_image(Graph& g, NodeId reference,
                                                     BatchNormMode mode) {
  const Tensor& v = g.value(reference);
  check(v.rank() == 4 && v.dim(1) == 3 && v.dim(2) == config_.image_size &&
            v.dim(3) == config_.image_size,
        "encode_image: expected (N,3,", config_.image_size, ",",
        config_.image_size, "), got ", v.shape_str());
  ContentFeatures out;
  NodeId x = reference;
  for (const ConvBlock& stage : content_stages_) {
    x = block(g, stage, x, mode);
    out.levels.push_back(x);
  }
  out.global = block(g, content_global_, x, mode);
  return out;
}

VideoModel::LatentGaussian VideoModel::encode_motion(Graph& g, NodeId clip,
                                                     BatchNormMode mode) {
  const Tensor& v = g.value(clip);
  check(v.rank() == 5 && v.dim(1) == 3 && v.dim(2) == config_.frames + 1 &&
            v.dim(3) == config_.image_size && v.dim(4) == config_.image_size,
        "encode_motion: expected (N,3,", config_.frames + 1, ",",
        config_.image_size, ",", config_.image_size, "), got ", v.shape_str());
  const int n = v.dim(0);
  NodeId x = clip;
  for (const ConvBlock& stage : motion_stages_) {
    x = block(g, stage, x, mode);
    x = g.max_pool(x, {1, 2, 2});
  }
  LatentGaussian latent;
  latent.mu = g.reshape(motion_mu_(g, params_, x), {n, config_.z_dim()});
  latent.log_var =
      g.reshape(motion_log_var_(g, params_, x), {n, config_.z_dim()});
  return latent;
}

NodeId VideoModel::reparameterize(Graph& g, const LatentGaussian& latent,
                                  const Tensor& epsilon) {
  const Tensor& mu = g.value(latent.mu);
  check(epsilon.same_shape(mu), "reparameterize: epsilon is ",
        epsilon.shape_str(), ", expected ", mu.shape_str());
  NodeId sigma = g.exp(g.scale(latent.log_var, 0.5f));
  return g.add(latent.mu, g.mul(sigma, g.constant(epsilon)));
}

VideoModel::FlowVolumes VideoModel::generate_flows(Graph& g, NodeId z,
                                                   const ContentFeatures& content,
                                                   BatchNormMode mode) {
  const Tensor& zv = g.value(z);
  const int levels = config_.levels();
  check(zv.rank() == 2 && zv.dim(1) == config_.z_dim(),
        "generate_flows: z must be (N,", config_.z_dim(), "), got ",
        zv.shape_str());
  check(static_cast<int>(content.levels.size()) == levels,
        "generate_flows: content features have ", content.levels.size(),
        " levels, config wants ", levels);
  const int n = zv.dim(0);
  const int doublings = config_.time_doublings();
  const int seed_ch = config_.scaled(full_width(1));

  // The latent code modulates the global content feature channelwise, then a
  // linear layer expands the fused code into the deepest video volume.
  NodeId fused = g.mul(z, g.reshape(content.global, {n, config_.z_dim()}));
  int t = config_.base_time();
  NodeId x = gen_seed_(g, params_, fused);
  x = g.reshape(x, {n, seed_ch, t, 4, 4});
  x = gen_seed_bn_(g, params_, x, mode);
  x = g.leaky_relu(x, 0.2f);

  int spatial = 4;
  for (int j = 1; j <= levels; ++j) {
    NodeId level = content.levels[static_cast<size_t>(levels - j)];
    NodeId shared = g.broadcast_time(level, t);
    x = block(g, gen_fusion_[static_cast<size_t>(j - 1)],
              g.concat(x, shared, 1), mode);
    const int tf = j <= doublings ? 2 : 1;
    x = g.upsample_nearest(x, {tf, 2, 2});
    x = block(g, gen_upconv_[static_cast<size_t>(j - 1)], x, mode);
    t *= tf;
    spatial *= 2;
    if (j < levels)
      x = block(g, gen_video_[static_cast<size_t>(j - 1)], x, mode);
  }
  check(t == config_.frames && spatial == config_.image_size,
        "generate_flows: internal shape drift");

  NodeId out = gen_output_(g, params_, x); // (N,4,T,H,W), linear
  FlowVolumes flows;
  flows.forward = g.narrow(out, 1, 0, 2);
  flows.backward = g.narrow(out, 1, 2, 2);
  return flows;
}

NodeId VideoModel::synthesis_network(Graph& g, NodeId input, BatchNormMode mode) {
  NodeId e1 = block(g, synth_encoder_[0], input, mode);
  NodeId e2 = block(g, synth_encoder_[1], g.max_pool(e1, {2, 2}), mode);
  NodeId e3 = block(g, synth_encoder_[2], g.max_pool(e2, {2, 2}), mode);
  NodeId e4 = block(g, synth_encoder_[3], g.max_pool(e3, {2, 2}), mode);

  NodeId d = g.add(g.upsample_nearest(block(g, synth_decoder_[0], e4, mode),
                                      {2, 2}),
                   e3);
  d = g.add(g.upsample_nearest(block(g, synth_decoder_[1], d, mode), {2, 2}), e2);
  d = g.add(g.upsample_nearest(block(g, synth_decoder_[2], d, mode), {2, 2}), e1);
  return synth_output_(g, params_, d);
}

NodeId VideoModel::synthesize_frame(Graph& g, NodeId warped, NodeId mask,
                                    BatchNormMode mode) {
  const Tensor& wv = g.value(warped);
  const Tensor& mv = g.value(mask);
  check(wv.rank() == 4 && wv.dim(1) == 3, "synthesize_frame: warped must be "
        "(N,3,H,W), got ", wv.shape_str());
  check(mv.rank() == 4 && mv.dim(0) == wv.dim(0) && mv.dim(1) == 1 &&
            mv.dim(2) == wv.dim(2) && mv.dim(3) == wv.dim(3),
        "synthesize_frame: mask ", mv.shape_str(), " does not align with ",
        wv.shape_str());
  NodeId m3 = g.concat(g.concat(mask, mask, 1), mask, 1);
  NodeId inverse = g.add_scalar(g.scale(m3, -1.0f), 1.0f);
  NodeId gated = g.add(g.mul(warped, m3), g.scale(inverse, 0.5f));
  return synthesis_network(g, g.concat(gated, mask, 1), mode);
}

VideoModel::TrainingPass VideoModel::forward_training_pass(Graph& g,
                                                           const Tensor& clip,
                                                           const Tensor& epsilon) {
  check(clip.rank() == 5 && clip.dim(1) == 3 &&
            clip.dim(2) == config_.frames + 1 &&
            clip.dim(3) == config_.image_size &&
            clip.dim(4) == config_.image_size,
        "forward_training_pass: clip must be (N,3,", config_.frames + 1, ",",
        config_.image_size, ",", config_.image_size, "), got ",
        clip.shape_str());
  const int n = clip.dim(0), tcount = config_.frames;
  const int h = config_.image_size, w = config_.image_size;
  const int64_t hw = static_cast<int64_t>(h) * w;

  TrainingPass pass;
  NodeId clip_node = g.constant(clip);
  pass.reference = g.reshape(g.narrow(clip_node, 2, 0, 1), {n, 3, h, w});
  for (int t = 1; t <= tcount; ++t)
    pass.targets.push_back(
        g.reshape(g.narrow(clip_node, 2, t, 1), {n, 3, h, w}));

  ContentFeatures content = encode_image(g, pass.reference, BatchNormMode::kTrain);
  pass.latent = encode_motion(g, clip_node, BatchNormMode::kTrain);
  pass.z = reparameterize(g, pass.latent, epsilon);
  pass.flows = generate_flows(g, pass.z, content, BatchNormMode::kTrain);

  std::vector<NodeId> synth_inputs;
  for (int t = 0; t < tcount; ++t) {
    NodeId fwd =
        g.reshape(g.narrow(pass.flows.forward, 2, t, 1), {n, 2, h, w});
    NodeId bwd =
        g.reshape(g.narrow(pass.flows.backward, 2, t, 1), {n, 2, h, w});
    pass.forward_slices.push_back(fwd);
    pass.backward_slices.push_back(bwd);

    // Visibility from the current flow estimates; constants on the tape.
    const Tensor& fv = g.value(fwd);
    const Tensor& bv = g.value(bwd);
    Tensor mref({n, 1, h, w}), mtgt({n, 1, h, w});
    for (int s = 0; s < n; ++s) {
      Tensor f1({2, h, w}), b1({2, h, w});
      std::memcpy(f1.data(), fv.data() + s * 2 * hw, 2 * hw * sizeof(float));
      std::memcpy(b1.data(), bv.data() + s * 2 * hw, 2 * hw * sizeof(float));
      const MaskPair pair = visibility_masks(f1, b1);
      std::memcpy(mref.data() + s * hw, pair.reference.data(),
                  hw * sizeof(float));
      std::memcpy(mtgt.data() + s * hw, pair.target.data(), hw * sizeof(float));
    }
    pass.mask_reference.push_back(mref);
    pass.mask_target.push_back(mtgt);

    pass.warped_target.push_back(g.warp_bilinear(pass.reference, bwd));
    pass.warped_reference.push_back(
        g.warp_bilinear(pass.targets[static_cast<size_t>(t)], fwd));
  }

  // Both synthesis directions run as one batched pass.
  auto gated_input = [&](NodeId warped, const Tensor& mask) {
    Tensor mask3({n, 3, h, w}), fill3({n, 3, h, w});
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < 3; ++c) {
        std::memcpy(mask3.data() + (s * 3 + c) * hw, mask.data() + s * hw,
                    hw * sizeof(float));
        float* f = fill3.data() + (s * 3 + c) * hw;
        const float* m = mask.data() + s * hw;
        for (int64_t i = 0; i < hw; ++i) f[i] = 0.5f * (1.0f - m[i]);
      }
    NodeId gated =
        g.add(g.mul(warped, g.constant(mask3)), g.constant(fill3));
    Tensor mask1({n, 1, h, w}, std::vector<float>(
                                   mask.data(), mask.data() + mask.numel()));
    return g.concat(gated, g.constant(mask1), 1);
  };
  for (int t = 0; t < tcount; ++t)
    synth_inputs.push_back(gated_input(pass.warped_target[static_cast<size_t>(t)],
                                       pass.mask_target[static_cast<size_t>(t)]));
  for (int t = 0; t < tcount; ++t)
    synth_inputs.push_back(
        gated_input(pass.warped_reference[static_cast<size_t>(t)],
                    pass.mask_reference[static_cast<size_t>(t)]));
  NodeId big = synth_inputs[0];
  for (size_t i = 1; i < synth_inputs.size(); ++i)
    big = g.concat(big, synth_inputs[i], 0);
  NodeId refined = synthesis_network(g, big, BatchNormMode::kTrain);
  for (int t = 0; t < tcount; ++t)
    pass.refined_target.push_back(g.narrow(refined, 0, t * n, n));
  for (int t = 0; t < tcount; ++t)
    pass.refined_reference.push_back(
        g.narrow(refined, 0, (tcount + t) * n, n));
  return pass;
}

VideoModel::SampleResult VideoModel::sample(const Tensor& reference,
                                            const Tensor& z) {
  check(reference.rank() == 3 && reference.dim(0) == 3 &&
            reference.dim(1) == config_.image_size &&
            reference.dim(2) == config_.image_size,
        "sample: reference must be (3,", config_.image_size, ",",
        config_.image_size, "), got ", reference.shape_str());
  Tensor z_row = z;
  if (z.rank() == 1) z_row = Tensor({1, z.dim(0)}, std::vector<float>(
                                        z.data(), z.data() + z.numel()));
  check(z_row.rank() == 2 && z_row.dim(0) == 1 && z_row.dim(1) == config_.z_dim(),
        "sample: z must have dim ", config_.z_dim(), ", got ", z.shape_str());

  const int h = config_.image_size, w = config_.image_size;
  const int64_t hw = static_cast<int64_t>(h) * w;
  Graph g;
  NodeId i0 = g.constant(Tensor({1, 3, h, w}, std::vector<float>(
                                    reference.data(),
                                    reference.data() + reference.numel())));
  ContentFeatures content = encode_image(g, i0, BatchNormMode::kEval);
  FlowVolumes flows = generate_flows(g, g.constant(z_row), content, BatchNormMode::kEval);

  SampleResult result;
  std::vector<NodeId> synth_inputs;
  for (int t = 0; t < config_.frames; ++t) {
    NodeId fwd = g.reshape(g.narrow(flows.forward, 2, t, 1), {1, 2, h, w});
    NodeId bwd = g.reshape(g.narrow(flows.backward, 2, t, 1), {1, 2, h, w});
    Tensor f1({2, h, w},
              std::vector<float>(g.value(fwd).data(),
                                 g.value(fwd).data() + 2 * hw));
    Tensor b1({2, h, w},
              std::vector<float>(g.value(bwd).data(),
                                 g.value(bwd).data() + 2 * hw));
    const MaskPair pair = visibility_masks(f1, b1);
    result.forward_flow.push_back(f1);
    result.backward_flow.push_back(b1);
    result.visible_reference.push_back(pair.reference);
    result.visible_target.push_back(pair.target);

    // Test phase uses only the backward warp and its visibility.
    NodeId warped = g.warp_bilinear(i0, bwd);
    Tensor mask3({1, 3, h, w}), fill3({1, 3, h, w});
    for (int c = 0; c < 3; ++c) {
      std::memcpy(mask3.data() + c * hw, pair.target.data(), hw * sizeof(float));
      float* f = fill3.data() + c * hw;
      for (int64_t i = 0; i < hw; ++i)
        f[i] = 0.5f * (1.0f - pair.target[i]);
    }
    NodeId gated = g.add(g.mul(warped, g.constant(mask3)), g.constant(fill3));
    Tensor mask1({1, 1, h, w}, std::vector<float>(
                                   pair.target.data(),
                                   pair.target.data() + pair.target.numel()));
    synth_inputs.push_back(g.concat(gated, g.constant(mask1), 1));
  }
  NodeId big = synth_inputs[0];
  for (size_t i = 1; i < synth_inputs.size(); ++i)
    big = g.concat(big, synth_inputs[i], 0);
  NodeId refined = synthesis_network(g, big, BatchNormMode::kEval);
  const Tensor& rv = g.value(refined);
  for (int t = 0; t < config_.frames; ++t) {
    Tensor frame({3, h, w});
    std::memcpy(frame.data(), rv.data() + t * 3 * hw, 3 * hw * sizeof(float));
    result.frames.push_back(clamp_unit(frame));
  }
  return result;
}

std::vector<Tensor> VideoModel::sample_sequence(const Tensor& reference,
                                                const Tensor& z) {
  return sample(reference, z).frames;
}

std::vector<Tensor> VideoModel::sample_sequence(const Tensor& reference,
                                                uint64_t seed) {
  Rng rng(seed);
  return sample_sequence(reference, draw_prior(rng, 1));
}

std::vector<Tensor> VideoModel::iterative_rollout(const Tensor& reference,
                                                  int steps, uint64_t seed) {
  check(config_.frames == 1, "iterative_rollout requires a model with "
        "frames == 1, this one has frames == ", config_.frames);
  check(steps >= 1, "iterative_rollout: steps must be positive, got ", steps);
  Rng rng(seed);
  std::vector<Tensor> out;
  Tensor current = reference;
  for (int s = 0; s < steps; ++s) {
    current = sample_sequence(current, draw_prior(rng, 1)).front();
    out.push_back(current);
  }
  return out;
}

Tensor VideoModel::draw_prior(Rng& rng, int batch) const {
  Tensor z({batch, config_.z_dim()});
  for (int64_t i = 0; i < z.numel(); ++i)
    z[i] = static_cast<float>(rng.normal());
  return z;
}

}  // namespace snapflow

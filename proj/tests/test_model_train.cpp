#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <vector>

#include "doctest.h"

#include "snapflow/adam.hpp"
#include "snapflow/data.hpp"
#include "snapflow/model.hpp"
#include "snapflow/train.hpp"

using namespace snapflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("snapflow_model_" + std::to_string(Rng(::getpid() + 13).next_u64() % 100000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()) == 0;
}

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.image_size = 32;
  mc.frames = 2;
  mc.channel_scale = 0.03125f;
  mc.seed = 17;
  return mc;
}

Tensor random_clip(int n, int frames, int size, Rng& rng) {
  Tensor clip({n, 3, frames + 1, size, size});
  for (int64_t i = 0; i < clip.numel(); ++i)
    clip[i] = static_cast<float>(rng.uniform());
  return clip;
}

// 32x32 sprite dataset, two flow steps; small enough for quick runs
std::string write_tiny_dataset(const TempDir& dir, int train_count = 6) {
  DatasetParams params;
  params.scene.width = params.scene.height = 32;
  params.scene.frames = 2;
  params.scene.min_bitmap = 12;
  params.scene.max_bitmap = 14;
  params.train_count = train_count;
  params.test_count = 2;
  params.seed = 5;
  const std::string root = (dir.path / "data").string();
  make_dataset(root, params);
  return root;
}

RunConfig tiny_run(const std::string& data_root) {
  RunConfig cfg;
  cfg.image_size = 32;
  cfg.frames = 2;
  cfg.channel_scale = 0.03125f;
  cfg.batch_size = 2;
  cfg.steps = 3;
  cfg.seed = 9;
  cfg.checkpoint_every = 2;
  cfg.log_every = 0;
  cfg.data_root = data_root;
  return cfg;
}

}  // namespace

TEST_CASE("architecture bookkeeping follows the image size") {
  ModelConfig mc = tiny_config();
  CHECK(mc.levels() == 3);
  mc.image_size = 64;
  CHECK(mc.levels() == 4);
  mc.image_size = 128;
  CHECK(mc.levels() == 5);

  mc.channel_scale = 1.0f;
  CHECK(mc.z_dim() == 1024);
  CHECK(mc.scaled(512) == 512);
  mc.channel_scale = 0.125f;
  CHECK(mc.z_dim() == 128);
  CHECK(mc.scaled(20) == 4);  // floor at 4 channels

  mc.frames = 4;
  CHECK(mc.time_doublings() == 2);
  CHECK(mc.base_time() == 1);
  mc.frames = 8;
  CHECK(mc.time_doublings() == 2);
  CHECK(mc.base_time() == 2);
  mc.frames = 6;
  CHECK(mc.time_doublings() == 1);
  CHECK(mc.base_time() == 3);
  mc.frames = 1;
  CHECK(mc.time_doublings() == 0);
  CHECK(mc.base_time() == 1);

  ModelConfig bad = tiny_config();
  bad.image_size = 48;
  CHECK_THROWS(bad.validate());
  bad.image_size = 16;
  CHECK_THROWS(bad.validate());
  bad = tiny_config();
  bad.frames = 0;
  CHECK_THROWS(bad.validate());
  bad = tiny_config();
  bad.channel_scale = 0.0f;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("training pass produces consistently shaped pieces") {
  const ModelConfig mc = tiny_config();
  VideoModel model(mc);
  CHECK(model.params().total_elements() > 1000);

  Rng rng(61);
  const int n = 2;
  Tensor clip = random_clip(n, mc.frames, mc.image_size, rng);
  Tensor epsilon({n, mc.z_dim()});
  for (int64_t i = 0; i < epsilon.numel(); ++i)
    epsilon[i] = static_cast<float>(rng.normal());

  Graph g;
  VideoModel::TrainingPass pass = model.forward_training_pass(g, clip, epsilon);

  const Tensor& fwd = g.value(pass.flows.forward);
  REQUIRE(fwd.rank() == 5);
  CHECK(fwd.dim(0) == n);
  CHECK(fwd.dim(1) == 2);
  CHECK(fwd.dim(2) == mc.frames);
  CHECK(fwd.dim(3) == mc.image_size);

  const Tensor& mu = g.value(pass.latent.mu);
  CHECK(mu.dim(0) == n);
  CHECK(mu.dim(1) == mc.z_dim());

  REQUIRE(pass.forward_slices.size() == static_cast<size_t>(mc.frames));
  REQUIRE(pass.targets.size() == static_cast<size_t>(mc.frames));
  REQUIRE(pass.refined_target.size() == static_cast<size_t>(mc.frames));
  REQUIRE(pass.refined_reference.size() == static_cast<size_t>(mc.frames));
  for (int t = 0; t < mc.frames; ++t) {
    const Tensor& slice = g.value(pass.forward_slices[static_cast<size_t>(t)]);
    CHECK(slice.dim(1) == 2);
    const Tensor& refined = g.value(pass.refined_target[static_cast<size_t>(t)]);
    CHECK(refined.dim(1) == 3);
    CHECK(refined.dim(2) == mc.image_size);
    const Tensor& mask = pass.mask_reference[static_cast<size_t>(t)];
    CHECK(mask.dim(1) == 1);
    for (int64_t i = 0; i < mask.numel(); ++i)
      CHECK((mask[i] == 0.0f || mask[i] == 1.0f));
  }
}

TEST_CASE("every trainable parameter receives a finite gradient") {
  const ModelConfig mc = tiny_config();
  VideoModel model(mc);
  Rng rng(62);
  Tensor clip = random_clip(1, mc.frames, mc.image_size, rng);
  Tensor epsilon({1, mc.z_dim()});
  for (int64_t i = 0; i < epsilon.numel(); ++i)
    epsilon[i] = static_cast<float>(rng.normal());

  Graph g;
  VideoModel::TrainingPass pass = model.forward_training_pass(g, clip, epsilon);
  const FeaturePyramid pyramid;
  const LossWeights weights;
  ObjectiveParts parts = build_objective(g, pass, pyramid, weights);
  NodeId total = total_objective(g, parts, weights);
  CHECK(std::isfinite(g.value(total)[0]));
  g.backward(total);

  const auto grads = g.param_grads();
  size_t trainable = 0;
  for (const auto& [name, entry] : model.params())
    if (entry.trainable) ++trainable;
  CHECK(grads.size() == trainable);
  for (const auto& [name, grad] : grads) {
    INFO("parameter " << name);
    CHECK(grad.all_finite());
  }
}

TEST_CASE("sampling is a function of reference and z") {
  const ModelConfig mc = tiny_config();
  VideoModel model(mc);
  Rng rng(63);
  Tensor ref({3, mc.image_size, mc.image_size});
  for (int64_t i = 0; i < ref.numel(); ++i)
    ref[i] = static_cast<float>(rng.uniform());

  Tensor z = model.draw_prior(rng, 1);
  REQUIRE(z.rank() == 2);
  CHECK(z.dim(0) == 1);
  CHECK(z.dim(1) == mc.z_dim());

  VideoModel::SampleResult a = model.sample(ref, z);
  VideoModel::SampleResult b = model.sample(ref, z);
  REQUIRE(a.frames.size() == static_cast<size_t>(mc.frames));
  REQUIRE(a.backward_flow.size() == static_cast<size_t>(mc.frames));
  for (size_t t = 0; t < a.frames.size(); ++t) {
    CHECK(bits_equal(a.frames[t], b.frames[t]));
    CHECK(bits_equal(a.backward_flow[t], b.backward_flow[t]));
    for (int64_t i = 0; i < a.frames[t].numel(); ++i) {
      CHECK(a.frames[t][i] >= 0.0f);
      CHECK(a.frames[t][i] <= 1.0f);
    }
    for (int64_t i = 0; i < a.visible_target[t].numel(); ++i)
      CHECK((a.visible_target[t][i] == 0.0f || a.visible_target[t][i] == 1.0f));
  }

  std::vector<Tensor> s1 = model.sample_sequence(ref, 123u);
  std::vector<Tensor> s2 = model.sample_sequence(ref, 123u);
  std::vector<Tensor> s3 = model.sample_sequence(ref, 124u);
  REQUIRE(s1.size() == s2.size());
  bool differs = false;
  for (size_t t = 0; t < s1.size(); ++t) {
    CHECK(bits_equal(s1[t], s2[t]));
    if (!bits_equal(s1[t], s3[t])) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("iterative rollout needs a single-step model") {
  ModelConfig mc = tiny_config();
  VideoModel two_step(mc);
  Tensor ref({3, mc.image_size, mc.image_size});
  CHECK_THROWS(two_step.iterative_rollout(ref, 3, 1u));

  mc.frames = 1;
  VideoModel one_step(mc);
  std::vector<Tensor> rolled = one_step.iterative_rollout(ref, 3, 1u);
  REQUIRE(rolled.size() == 3);
  for (const Tensor& f : rolled) {
    CHECK(f.dim(0) == 3);
    CHECK(f.all_finite());
  }
}

TEST_CASE("adam takes the textbook first step") {
  ParamStore ps;
  ps.add("p", Tensor({2}, {1.0f, -0.5f}));
  std::map<std::string, Tensor> grads;
  grads.emplace("p", Tensor({2}, {1.0f, -1.0f}));

  Adam opt(1e-3f);
  opt.step(ps, grads);
  CHECK(opt.steps_taken() == 1);
  // bias correction makes the first update exactly lr-sized (up to eps)
  CHECK(ps.get("p")[0] == doctest::Approx(1.0f - 1e-3f).epsilon(1e-6));
  CHECK(ps.get("p")[1] == doctest::Approx(-0.5f + 1e-3f).epsilon(1e-6));
}

TEST_CASE("adam leaves frozen and gradient-free parameters alone") {
  ParamStore ps;
  ps.add("train", Tensor({1}, {1.0f}));
  ps.add("frozen", Tensor({1}, {1.0f}), false);
  ps.add("quiet", Tensor({1}, {1.0f}));

  std::map<std::string, Tensor> grads;
  grads.emplace("train", Tensor({1}, {1.0f}));
  grads.emplace("frozen", Tensor({1}, {1.0f}));

  Adam opt;
  opt.step(ps, grads);
  CHECK(ps.get("train")[0] != 1.0f);
  CHECK(ps.get("frozen")[0] == 1.0f);
  CHECK(ps.get("quiet")[0] == 1.0f);

  std::map<std::string, Tensor> bad;
  bad.emplace("train", Tensor({1}, {std::nanf("")}));
  CHECK_THROWS(opt.step(ps, bad));

  std::map<std::string, Tensor> wrong_shape;
  wrong_shape.emplace("train", Tensor({2}));
  CHECK_THROWS(opt.step(ps, wrong_shape));
}

TEST_CASE("adam state exports and imports exactly") {
  ParamStore ps;
  Rng rng(64);
  Tensor init({8});
  for (int64_t i = 0; i < 8; ++i) init[i] = static_cast<float>(rng.uniform());
  ps.add("p", init);

  Adam a(1e-3f);
  for (int step = 0; step < 3; ++step) {
    std::map<std::string, Tensor> grads;
    Tensor grad({8});
    for (int64_t i = 0; i < 8; ++i) grad[i] = static_cast<float>(rng.normal());
    grads.emplace("p", grad);
    a.step(ps, grads);
  }

  Adam b;
  b.import_state(a.export_state());
  CHECK(b.steps_taken() == 3);

  // the same gradient now moves both optimizers identically
  ParamStore psa, psb;
  psa.add("p", ps.get("p"));
  psb.add("p", ps.get("p"));
  std::map<std::string, Tensor> grads;
  grads.emplace("p", Tensor::full({8}, 0.3f));
  a.step(psa, grads);
  b.step(psb, grads);
  CHECK(bits_equal(psa.get("p"), psb.get("p")));
}

TEST_CASE("config mapping into model and loss settings") {
  RunConfig cfg = RunConfig::profile("desk");
  cfg.loss_photometric = 2.0f;
  cfg.loss_cycle = 0.25f;
  cfg.loss_perceptual = 0.5f;
  cfg.loss_smoothness = 0.01f;

  const ModelConfig mc = model_config_from(cfg);
  CHECK(mc.image_size == 64);
  CHECK(mc.frames == 4);
  CHECK(mc.channel_scale == 0.125f);
  CHECK(mc.seed == 17);

  const LossWeights w = loss_weights_from(cfg);
  CHECK(w.bi_vc == 2.0f);
  CHECK(w.cc == 0.25f);
  CHECK(w.pp == 0.5f);
  CHECK(w.tv == 0.01f);
}

TEST_CASE("checkpoints restore the model and optimizer exactly") {
  TempDir dir;
  const ModelConfig mc = tiny_config();
  VideoModel model(mc);
  Adam opt(2e-3f);
  RunConfig cfg = tiny_run("/nowhere");
  const std::string path = (dir.path / "model.ckpt").string();
  save_checkpoint(path, model, opt, cfg, 7);

  const CheckpointHeader header = read_checkpoint_header(path);
  CHECK(header.step == 7);
  CHECK(header.config.image_size == 32);
  CHECK(header.config.channel_scale == 0.03125f);

  VideoModel loaded(model_config_from(header.config));
  Adam opt2;
  load_checkpoint(path, loaded, &opt2);
  for (const auto& [name, entry] : model.params())
    CHECK(bits_equal(loaded.params().get(name), entry.tensor));
}

TEST_CASE("short training runs stay finite and checkpoint on schedule") {
  TempDir dir;
  const std::string data = write_tiny_dataset(dir);
  RunConfig cfg = tiny_run(data);

  VideoModel model(model_config_from(cfg));
  TrainOptions options;
  options.run_dir = (dir.path / "run").string();
  options.log = [](const std::string&) {};
  const TrainResult result = train_model(model, cfg, options);

  REQUIRE(result.history.size() == 3);
  for (const LossReport& r : result.history) {
    CHECK(std::isfinite(r.total));
    CHECK(r.kl >= 0.0f);
  }
  CHECK(fs::exists(dir.path / "run" / "checkpoint_000002.ckpt"));
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(result.final_checkpoint.find("checkpoint_000003") != std::string::npos);
}

TEST_CASE("a resumed run reproduces the uninterrupted trajectory bit for bit") {
  TempDir dir;
  const std::string data = write_tiny_dataset(dir);

  RunConfig cfg = tiny_run(data);
  cfg.steps = 4;

  // uninterrupted
  VideoModel straight(model_config_from(cfg));
  TrainOptions oa;
  oa.run_dir = (dir.path / "straight").string();
  oa.log = [](const std::string&) {};
  train_model(straight, cfg, oa);

  // stop at 2, then pick the checkpoint back up
  RunConfig half = cfg;
  half.steps = 2;
  VideoModel stopped(model_config_from(half));
  TrainOptions ob;
  ob.run_dir = (dir.path / "halfway").string();
  ob.log = [](const std::string&) {};
  train_model(stopped, half, ob);

  VideoModel resumed(model_config_from(cfg));
  TrainOptions oc;
  oc.run_dir = (dir.path / "resumed").string();
  oc.resume_from = (dir.path / "halfway" / "checkpoint_000002.ckpt").string();
  oc.log = [](const std::string&) {};
  const TrainResult rc = train_model(resumed, cfg, oc);
  CHECK(rc.first_step == 2);
  CHECK(rc.history.size() == 2);

  std::ifstream fa(dir.path / "straight" / "checkpoint_000004.ckpt", std::ios::binary);
  std::ifstream fb(dir.path / "resumed" / "checkpoint_000004.ckpt", std::ios::binary);
  REQUIRE(fa.good());
  REQUIRE(fb.good());
  const std::string ba((std::istreambuf_iterator<char>(fa)), {});
  const std::string bb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ba == bb);
}

TEST_CASE("training rejects mismatched models, checkpoints and datasets") {
  TempDir dir;
  const std::string data = write_tiny_dataset(dir, 4);
  RunConfig cfg = tiny_run(data);

  // model built for a different clip length
  RunConfig other = cfg;
  other.frames = 1;
  VideoModel wrong(model_config_from(other));
  CHECK_THROWS(train_model(wrong, cfg));

  // dataset clips are shorter than the config wants
  RunConfig long_cfg = cfg;
  long_cfg.frames = 4;
  VideoModel long_model(model_config_from(long_cfg));
  CHECK_THROWS(train_model(long_model, long_cfg));

  // checkpoint from a different architecture
  VideoModel m(model_config_from(cfg));
  TrainOptions opts;
  opts.run_dir = (dir.path / "run").string();
  opts.log = [](const std::string&) {};
  RunConfig two = cfg;
  two.steps = 2;
  train_model(m, two, opts);

  RunConfig wider = cfg;
  wider.channel_scale = 0.0625f;
  VideoModel wide(model_config_from(wider));
  TrainOptions bad;
  bad.resume_from = (dir.path / "run" / "checkpoint_000002.ckpt").string();
  bad.log = [](const std::string&) {};
  CHECK_THROWS(train_model(wide, wider, bad));

  // the checkpoint already sits past the requested step count
  RunConfig shorter = cfg;
  shorter.steps = 1;
  VideoModel fresh(model_config_from(cfg));
  TrainOptions late;
  late.resume_from = (dir.path / "run" / "checkpoint_000002.ckpt").string();
  late.log = [](const std::string&) {};
  CHECK_THROWS(train_model(fresh, shorter, late));
}

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "snapflow/config.hpp"
#include "snapflow/data.hpp"
#include "snapflow/io.hpp"
#include "snapflow/metrics.hpp"
#include "snapflow/model.hpp"
#include "snapflow/runtime.hpp"
#include "snapflow/selfcheck.hpp"
#include "snapflow/train.hpp"
#include "snapflow/version.hpp"

namespace fs = std::filesystem;
using namespace snapflow;

namespace {

std::string numbered(const std::string& stem, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem.c_str(), index, ext);
  return buf;
}

void write_run_info(const fs::path& dir, const std::string& command) {
  write_text_file((dir / "run_info.txt").string(),
                  str_cat("build = ", build_id(), "\ncommand = ", command, "\n"));
}

struct MakeDataArgs {
  std::string out, sprites = "blobs", mnist_images;
  int train_count = 500, test_count = 50, image_size = 64, frames = 4;
  uint64_t seed = 1;
  bool force = false;
};

int run_make_data(const MakeDataArgs& a) {
  fs::path out(a.out);
  if (fs::exists(out))
    check(a.force || (fs::is_directory(out) && fs::is_empty(out)),
          "output directory ", a.out, " is not empty; pass --force to reuse it");

  DatasetParams params;
  params.scene.width = a.image_size;
  params.scene.height = a.image_size;
  params.scene.frames = a.frames;
  params.train_count = a.train_count;
  params.test_count = a.test_count;
  params.seed = a.seed;

  if (a.sprites == "mnist") {
    check(!a.mnist_images.empty(), "--sprites mnist requires --mnist-images");
    const Tensor images = ingest_idx(a.mnist_images);
    check(images.rank() == 4 && images.dim(1) == 1 &&
              images.dim(2) == images.dim(3),
          a.mnist_images, ": expected an image IDX file, got ",
          images.shape_str());
    const int s = images.dim(2);
    const int64_t plane = static_cast<int64_t>(s) * s;
    const int take = std::min(images.dim(0), 2048);
    for (int i = 0; i < take; ++i) {
      Tensor bitmap({s, s});
      std::memcpy(bitmap.data(), images.data() + i * plane,
                  static_cast<size_t>(plane) * sizeof(float));
      params.bitmap_pool.push_back(std::move(bitmap));
    }
  } else {
    check(a.sprites == "blobs", "unknown --sprites value: ", a.sprites,
          " (choose blobs or mnist)");
  }

  make_dataset(a.out, params);
  std::cout << "wrote " << a.train_count << " train + " << a.test_count
            << " test sequences under " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string out, profile = "desk", config_file, resume;
  std::vector<std::pair<std::string, std::string>> overrides;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = RunConfig::profile(a.profile);
  if (!a.config_file.empty()) cfg.apply_file(a.config_file);
  for (const auto& [key, value] : a.overrides) cfg.apply(key, value);
  cfg.validate();
  check(!cfg.data_root.empty(),
        "no dataset given; pass --data_root or set it in the config file");

  fs::create_directories(a.out);
  write_text_file((fs::path(a.out) / "config.txt").string(), cfg.text());
  write_run_info(a.out, "train");
  std::ofstream log_file(fs::path(a.out) / "train.log", std::ios::app);
  check(log_file.good(), "cannot open train.log under ", a.out);

  VideoModel model(model_config_from(cfg));
  std::cout << "model: " << model.params().total_elements() << " weights, "
            << cfg.steps << " steps, data " << cfg.data_root << std::endl;

  TrainOptions options;
  options.run_dir = a.out;
  options.resume_from = a.resume;
  options.log = [&log_file](const std::string& line) {
    std::cout << line << std::endl;
    log_file << line << '\n';
    log_file.flush();
  };
  TrainResult result = train_model(model, cfg, options);
  std::cout << "done; final checkpoint " << result.final_checkpoint << std::endl;
  return 0;
}

struct SampleArgs {
  std::string checkpoint, image, out;
  int count = 2;
  uint64_t seed = 1;
};

int run_sample(const SampleArgs& a) {
  const CheckpointHeader header = read_checkpoint_header(a.checkpoint);
  VideoModel model(model_config_from(header.config));
  load_checkpoint(a.checkpoint, model);
  const int size = header.config.image_size;

  const Tensor reference = png_read(a.image);
  check(reference.rank() == 3 && reference.dim(0) == 3 &&
            reference.dim(1) == size && reference.dim(2) == size,
        a.image, " is ", reference.shape_str(), ", the checkpoint wants (3,",
        size, ",", size, ")");
  check(a.count >= 1, "--count must be positive");

  fs::create_directories(a.out);
  write_text_file((fs::path(a.out) / "config.txt").string(),
                  header.config.text());
  write_run_info(a.out, "sample");

  Rng base(a.seed);
  for (int k = 0; k < a.count; ++k) {
    Rng rng = base.split(static_cast<uint64_t>(k));
    const Tensor z = model.draw_prior(rng, 1);
    const VideoModel::SampleResult result = model.sample(reference, z);

    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d", k);
    const fs::path dir = fs::path(a.out) / name;
    fs::create_directories(dir);
    png_write((dir / numbered("frame", 0, "png")).string(), reference);
    for (int t = 0; t < header.config.frames; ++t) {
      const size_t ti = static_cast<size_t>(t);
      png_write((dir / numbered("frame", t + 1, "png")).string(),
                result.frames[ti]);
      flo_write((dir / numbered("bwd", t + 1, "flo")).string(),
                result.backward_flow[ti]);
      png_write((dir / numbered("flow", t + 1, "png")).string(),
                flow_to_color(result.backward_flow[ti]));
      png_write((dir / numbered("vis_ref", t + 1, "png")).string(),
                result.visible_reference[ti]);
      png_write((dir / numbered("vis_tgt", t + 1, "png")).string(),
                result.visible_target[ti]);
      png_write((dir / numbered("overlay", t + 1, "png")).string(),
                motion_overlay(reference, result.frames[ti]));
    }
  }
  std::cout << "wrote " << a.count << " sampled sequences under " << a.out
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out;
  int k = 20;
  uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
  check(a.k >= 1, "--k must be positive");
  const CheckpointHeader header = read_checkpoint_header(a.checkpoint);
  VideoModel model(model_config_from(header.config));
  load_checkpoint(a.checkpoint, model);

  const std::vector<Sequence> test = read_dataset(a.data, "test");
  check(!test.empty(), "test split under ", a.data, " is empty");

  std::ostringstream report;
  report << "# eval checkpoint=" << a.checkpoint << " k=" << a.k
         << " seed=" << a.seed << " build=" << build_id() << "\n";
  report << "# sequence model_psnr model_ssim baseline_psnr baseline_ssim\n";
  double mp = 0, ms = 0, bp = 0, bs = 0;
  Rng base(a.seed);
  for (size_t i = 0; i < test.size(); ++i) {
    const Sequence& seq = test[i];
    const Tensor& reference = seq.frames.front();
    const std::vector<Tensor> truth(seq.frames.begin() + 1, seq.frames.end());

    Rng rng = base.split(i);
    std::vector<std::vector<Tensor>> candidates;
    for (int k = 0; k < a.k; ++k)
      candidates.push_back(
          model.sample_sequence(reference, model.draw_prior(rng, 1)));
    const SequenceScore best = best_of_k(candidates, truth);

    // "predict no motion": every frame is the reference
    const std::vector<Tensor> frozen(truth.size(), reference);
    const SequenceScore baseline = score_sequence(frozen, truth);

    report << i << " " << best.psnr << " " << best.ssim << " " << baseline.psnr
           << " " << baseline.ssim << "\n";
    mp += best.psnr;
    ms += best.ssim;
    bp += baseline.psnr;
    bs += baseline.ssim;
  }
  const double n = static_cast<double>(test.size());
  report << "# means over " << test.size() << " sequences\n";
  report << "mean " << mp / n << " " << ms / n << " " << bp / n << " " << bs / n
         << "\n";

  std::cout << report.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text_file((fs::path(a.out) / "report.txt").string(), report.str());
    write_run_info(a.out, "eval");
  }
  return 0;
}

struct CheckArgs {
  bool grad = false, warp = false, occlusion = false;
  uint64_t seed = 2024;
};

int run_check(const CheckArgs& a) {
  const bool all = !(a.grad || a.warp || a.occlusion);
  bool ok = true;
  auto run = [&ok](const CheckSummary& summary, const char* title) {
    std::cout << "== " << title << " ==\n" << summary.text();
    ok = ok && summary.all_passed();
  };
  if (all || a.grad) run(check_gradients(a.seed), "gradients vs finite differences");
  if (all || a.warp) run(check_warp_oracle(a.seed), "warp vs index oracle");
  if (all || a.occlusion) run(check_occlusion_f1(a.seed), "occlusion masks vs oracle");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  pin_blas_threads();

  CLI::App app{"bi-directional flow video generation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", build_id());

  MakeDataArgs margs;
  CLI::App* make = app.add_subcommand("make-data", "generate a sprite dataset");
  make->add_option("--out", margs.out, "dataset directory")->required();
  make->add_option("--train-count", margs.train_count, "training sequences");
  make->add_option("--test-count", margs.test_count, "test sequences");
  make->add_option("--image-size", margs.image_size, "canvas size in pixels");
  make->add_option("--frames", margs.frames, "flow steps per sequence");
  make->add_option("--seed", margs.seed, "dataset seed");
  make->add_option("--sprites", margs.sprites, "sprite source: blobs or mnist");
  make->add_option("--mnist-images", margs.mnist_images,
                   "IDX image file for --sprites mnist");
  make->add_flag("--force", margs.force, "write into a non-empty directory");

  TrainArgs targs;
  CLI::App* train = app.add_subcommand("train", "optimize a model");
  train->add_option("--out", targs.out, "run directory")->required();
  train->add_option("--profile", targs.profile, "desk or paper128");
  train->add_option("--config", targs.config_file, "key = value config file");
  train->add_option("--resume", targs.resume, "checkpoint to continue from");
  for (const char* key :
       {"image_size", "frames", "channel_scale", "batch_size", "steps",
        "learning_rate", "seed", "checkpoint_every", "log_every",
        "loss_photometric", "loss_cycle", "loss_perceptual", "loss_smoothness",
        "data_root"}) {
    train->add_option_function<std::string>(
        std::string("--") + key,
        [&targs, key](const std::string& value) {
          targs.overrides.emplace_back(key, value);
        },
        std::string("override config key ") + key);
  }

  SampleArgs sargs;
  CLI::App* sample = app.add_subcommand("sample", "generate sequences from one frame");
  sample->add_option("--checkpoint", sargs.checkpoint, "trained checkpoint")->required();
  sample->add_option("--image", sargs.image, "reference frame PNG")->required();
  sample->add_option("--out", sargs.out, "output directory")->required();
  sample->add_option("--count", sargs.count, "number of sequences");
  sample->add_option("--seed", sargs.seed, "sampling seed");

  EvalArgs eargs;
  CLI::App* eval = app.add_subcommand("eval", "best-of-K metrics on the test split");
  eval->add_option("--checkpoint", eargs.checkpoint, "trained checkpoint")->required();
  eval->add_option("--data", eargs.data, "dataset root")->required();
  eval->add_option("--k", eargs.k, "samples per sequence");
  eval->add_option("--seed", eargs.seed, "sampling seed");
  eval->add_option("--out", eargs.out, "directory for report.txt");

  CheckArgs cargs;
  CLI::App* chk = app.add_subcommand("check", "run the verification harnesses");
  chk->add_flag("--grad", cargs.grad, "finite-difference gradient suite");
  chk->add_flag("--warp", cargs.warp, "warp index oracle");
  chk->add_flag("--occlusion", cargs.occlusion, "occlusion F1 vs scene oracle");
  chk->add_option("--seed", cargs.seed, "harness seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (make->parsed()) return run_make_data(margs);
    if (train->parsed()) return run_train(targs);
    if (sample->parsed()) return run_sample(sargs);
    if (eval->parsed()) return run_eval(eargs);
    if (chk->parsed()) return run_check(cargs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "snapflow/common.hpp"

namespace snapflow {

// Flat training configuration. Files hold one "key = value" per line; blank
// lines and lines starting with '#' are skipped; unknown keys are rejected.
struct RunConfig {
  int image_size = 64;
  int frames = 4;          // flow steps per sequence; clips have frames+1 images
  float channel_scale = 0.125f;
  int batch_size = 8;
  int64_t steps = 2000;
  float learning_rate = 1e-3f;
  uint64_t seed = 17;
  int64_t checkpoint_every = 500;
  int64_t log_every = 10;
  float loss_photometric = 1.0f;
  float loss_cycle = 0.05f;
  float loss_perceptual = 1.0f;
  float loss_smoothness = 1e-3f;
  std::string data_root;

  // "desk" is the small sprite setup; "paper128" the full-size configuration.
  static RunConfig profile(const std::string& name);

  void apply(const std::string& key, const std::string& value);
  void apply_file(const std::string& path);
  void validate() const;

  std::map<std::string, std::string> as_map() const;
  std::string text() const; // serialized, parseable by apply()
};

// Strict "key = value" splitter shared by config files and checkpoints.
// origin names the source in error messages.
std::map<std::string, std::string> parse_key_value_text(const std::string& text,
                                                        const std::string& origin);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace snapflow

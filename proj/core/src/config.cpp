#include "snapflow/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace snapflow {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int64_t v = std::stoll(value, &used);
    check(used == value.size(), "");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(str_cat("config key ", key,
                                     " expects an integer, got: ", value));
  }
}

uint64_t to_uint(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(value, &used);
    check(used == value.size(), "");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(str_cat("config key ", key,
                                     " expects an unsigned integer, got: ", value));
  }
}

float to_float(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const float v = std::stof(value, &used);
    check(used == value.size(), "");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(str_cat("config key ", key,
                                     " expects a number, got: ", value));
  }
}

std::string fmt(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

RunConfig RunConfig::profile(const std::string& name) {
  RunConfig cfg; // defaults are the desk profile
  if (name == "desk") return cfg;
  if (name == "paper128") {
    cfg.image_size = 128;
    cfg.frames = 8;
    cfg.channel_scale = 1.0f;
    cfg.batch_size = 32;
    cfg.steps = 60000;
    cfg.checkpoint_every = 2000;
    cfg.log_every = 50;
    return cfg;
  }
  check(false, "unknown profile: ", name, " (known: desk, paper128)");
  return cfg;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "image_size") image_size = static_cast<int>(to_int(key, value));
  else if (key == "frames") frames = static_cast<int>(to_int(key, value));
  else if (key == "channel_scale") channel_scale = to_float(key, value);
  else if (key == "batch_size") batch_size = static_cast<int>(to_int(key, value));
  else if (key == "steps") steps = to_int(key, value);
  else if (key == "learning_rate") learning_rate = to_float(key, value);
  else if (key == "seed") seed = to_uint(key, value);
  else if (key == "checkpoint_every") checkpoint_every = to_int(key, value);
  else if (key == "log_every") log_every = to_int(key, value);
  else if (key == "loss_photometric") loss_photometric = to_float(key, value);
  else if (key == "loss_cycle") loss_cycle = to_float(key, value);
  else if (key == "loss_perceptual") loss_perceptual = to_float(key, value);
  else if (key == "loss_smoothness") loss_smoothness = to_float(key, value);
  else if (key == "data_root") data_root = value;
  else check(false, "unknown config key: ", key);
}

void RunConfig::apply_file(const std::string& path) {
  for (const auto& [k, v] : parse_key_value_text(read_text_file(path), path))
    apply(k, v);
}

void RunConfig::validate() const {
  check(image_size > 0, "image_size must be positive");
  check(frames >= 1, "frames must be at least 1");
  check(channel_scale > 0.0f, "channel_scale must be positive");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(steps >= 1, "steps must be at least 1");
  check(learning_rate > 0.0f, "learning_rate must be positive");
  check(checkpoint_every >= 1, "checkpoint_every must be at least 1");
  check(log_every >= 1, "log_every must be at least 1");
  check(loss_photometric >= 0.0f && loss_cycle >= 0.0f && loss_perceptual >= 0.0f &&
            loss_smoothness >= 0.0f,
        "loss weights must be non-negative");
}

std::map<std::string, std::string> RunConfig::as_map() const {
  std::map<std::string, std::string> kv;
  kv["image_size"] = std::to_string(image_size);
  kv["frames"] = std::to_string(frames);
  kv["channel_scale"] = fmt(channel_scale);
  kv["batch_size"] = std::to_string(batch_size);
  kv["steps"] = std::to_string(steps);
  kv["learning_rate"] = fmt(learning_rate);
  kv["seed"] = std::to_string(seed);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["log_every"] = std::to_string(log_every);
  kv["loss_photometric"] = fmt(loss_photometric);
  kv["loss_cycle"] = fmt(loss_cycle);
  kv["loss_perceptual"] = fmt(loss_perceptual);
  kv["loss_smoothness"] = fmt(loss_smoothness);
  kv["data_root"] = data_root;
  return kv;
}

std::string RunConfig::text() const {
  std::string out;
  for (const auto& [k, v] : as_map()) out += k + " = " + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_key_value_text(const std::string& text,
                                                        const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    check(eq != std::string::npos, origin, ":", lineno,
          ": expected 'key = value', got: ", stripped);
    const std::string key = trim(stripped.substr(0, eq));
    check(!key.empty(), origin, ":", lineno, ": empty key");
    check(kv.find(key) == kv.end(), origin, ":", lineno, ": duplicate key ", key);
    kv[key] = trim(stripped.substr(eq + 1));
  }
  return kv;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open ", path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  check(out.good(), "cannot open ", path, " for writing");
  out << text;
  out.flush();
  check(out.good(), "failed writing ", path);
}

}  // namespace snapflow

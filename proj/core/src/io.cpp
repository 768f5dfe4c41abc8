#include "snapflow/io.hpp"

#include <png.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace snapflow {

namespace {

constexpr float kFloMagic = 202021.25f;
constexpr char kCheckpointMagic[4] = {'I', 'F', 'L', 'W'};
constexpr uint32_t kCheckpointVersion = 1;
const char* kConfigEntry = "__config";

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open ", path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<size_t>(size));
  in.read(buf.data(), size);
  check(in.good(), "failed reading ", path);
  return buf;
}

void write_file(const std::string& path, const char* data, size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot open ", path, " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  out.flush();
  check(out.good(), "failed writing ", path);
}

template <typename T>
void append(std::vector<char>& buf, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

// Bounds-checked sequential reader that reports byte offsets on failure.
struct Cursor {
  const std::vector<char>& buf;
  const std::string& path;
  size_t pos = 0;

  template <typename T>
  T take() {
    check(pos + sizeof(T) <= buf.size(), path, ": truncated at byte ", pos,
          " (need ", sizeof(T), " more bytes, have ", buf.size() - pos, ")");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }

  std::string take_string(size_t len) {
    check(pos + len <= buf.size(), path, ": truncated string at byte ", pos);
    std::string s(buf.data() + pos, len);
    pos += len;
    return s;
  }

  const char* take_raw(size_t len) {
    check(pos + len <= buf.size(), path, ": truncated payload at byte ", pos,
          " (need ", len, " bytes, have ", buf.size() - pos, ")");
    const char* p = buf.data() + pos;
    pos += len;
    return p;
  }
};

uint8_t to_byte(float v) {
  const float scaled = v * 255.0f;
  const float clamped = scaled < 0.0f ? 0.0f : (scaled > 255.0f ? 255.0f : scaled);
  return static_cast<uint8_t>(std::lround(clamped));
}

std::string config_to_text(const std::map<std::string, std::string>& config) {
  std::string out;
  for (const auto& [k, v] : config) {
    check(k.find('\n') == std::string::npos && k.find('=') == std::string::npos,
          "config key may not contain '=' or newline: ", k);
    check(v.find('\n') == std::string::npos, "config value may not contain newline: ",
          k);
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::map<std::string, std::string> config_from_text(const std::string& text,
                                                    const std::string& path) {
  std::map<std::string, std::string> out;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const size_t eq = line.find(" = ");
    check(eq != std::string::npos, path, ": malformed config line: ", line);
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

}  // namespace

void flo_write(const std::string& path, const Tensor& flow) {
  check(flow.rank() == 3 && flow.dim(0) == 2, "flo_write: flow must be (2,H,W), got ",
        flow.shape_str());
  flow.require_finite("flo_write");
  const int h = flow.dim(1), w = flow.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::vector<char> buf;
  buf.reserve(12 + static_cast<size_t>(hw) * 8);
  append(buf, kFloMagic);
  append(buf, static_cast<int32_t>(w));
  append(buf, static_cast<int32_t>(h));
  for (int64_t i = 0; i < hw; ++i) {
    append(buf, flow[i]);       // u
    append(buf, flow[hw + i]);  // v
  }
  write_file(path, buf.data(), buf.size());
}

Tensor flo_read(const std::string& path) {
  const std::vector<char> buf = read_file(path);
  Cursor cur{buf, path};
  const float magic = cur.take<float>();
  check(magic == kFloMagic, path, ": bad magic ", magic, " at byte 0 (expected ",
        kFloMagic, ")");
  const int32_t w = cur.take<int32_t>();
  const int32_t h = cur.take<int32_t>();
  check(w > 0 && h > 0, path, ": non-positive dimensions ", w, "x", h, " at byte 4");
  const int64_t hw = static_cast<int64_t>(h) * w;
  const size_t expect = 12 + static_cast<size_t>(hw) * 8;
  check(buf.size() == expect, path, ": file is ", buf.size(), " bytes, expected ",
        expect, " for ", w, "x", h);
  Tensor flow({2, h, w});
  for (int64_t i = 0; i < hw; ++i) {
    flow[i] = cur.take<float>();
    flow[hw + i] = cur.take<float>();
  }
  return flow;
}

void png_write(const std::string& path, const Tensor& image) {
  check(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
        "png_write: image must be (1,H,W) or (3,H,W), got ", image.shape_str());
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  check(fp != nullptr, "cannot open ", path, " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    check(false, "libpng initialization failed for ", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    check(false, "libpng error while writing ", path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(w) * static_cast<size_t>(c));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<size_t>(x) * c + ch] =
            to_byte(image[ch * hw + static_cast<int64_t>(y) * w + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor png_read(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  check(fp != nullptr, "cannot open ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    check(false, "libpng initialization failed for ", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    check(false, "libpng error while reading ", path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = static_cast<int>(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    check(false, path, ": unsupported channel count ", c);
  }

  std::vector<uint8_t> raster(static_cast<size_t>(w) * h * c);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = raster.data() + static_cast<size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor image({c, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < hw; ++i)
    for (int ch = 0; ch < c; ++ch)
      image[ch * hw + i] = static_cast<float>(raster[i * c + ch]) / 255.0f;
  return image;
}

void checkpoint_write(const std::string& path,
                      const std::map<std::string, Tensor>& entries,
                      const std::map<std::string, std::string>& config) {
  check(entries.find(kConfigEntry) == entries.end(), "checkpoint entry name ",
        kConfigEntry, " is reserved");
  std::vector<char> buf;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
  append(buf, kCheckpointVersion);
  append(buf, static_cast<uint32_t>(entries.size() + 1));

  auto write_header = [&buf](const std::string& name, uint8_t dtype,
                             const std::vector<uint32_t>& dims) {
    append(buf, static_cast<uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    append(buf, dtype);
    append(buf, static_cast<uint8_t>(dims.size()));
    for (uint32_t d : dims) append(buf, d);
  };

  const std::string cfg = config_to_text(config);
  write_header(kConfigEntry, 1, {static_cast<uint32_t>(cfg.size())});
  buf.insert(buf.end(), cfg.begin(), cfg.end());

  for (const auto& [name, tensor] : entries) {
    check(!name.empty(), "checkpoint entry with empty name");
    std::vector<uint32_t> dims;
    for (int d : tensor.shape()) dims.push_back(static_cast<uint32_t>(d));
    write_header(name, 0, dims);
    const char* p = reinterpret_cast<const char*>(tensor.data());
    buf.insert(buf.end(), p, p + tensor.numel() * sizeof(float));
  }

  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size())));
  append(buf, crc);
  write_file(path, buf.data(), buf.size());
}

Checkpoint checkpoint_read(const std::string& path) {
  const std::vector<char> buf = read_file(path);
  check(buf.size() >= 16, path, ": too short to be a checkpoint (", buf.size(),
        " bytes)");

  const uint32_t stored_crc = [&] {
    uint32_t v;
    std::memcpy(&v, buf.data() + buf.size() - 4, 4);
    return v;
  }();
  const uint32_t actual_crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size() - 4)));
  check(stored_crc == actual_crc, path, ": CRC mismatch at byte ", buf.size() - 4,
        " (stored ", stored_crc, ", computed ", actual_crc, ")");

  Cursor cur{buf, path};
  const std::string magic = cur.take_string(4);
  check(std::memcmp(magic.data(), kCheckpointMagic, 4) == 0, path,
        ": bad magic at byte 0");
  const uint32_t version = cur.take<uint32_t>();
  check(version == kCheckpointVersion, path, ": unsupported version ", version,
        " at byte 4 (this build reads version ", kCheckpointVersion, ")");
  const uint32_t count = cur.take<uint32_t>();

  Checkpoint out;
  for (uint32_t e = 0; e < count; ++e) {
    const size_t entry_at = cur.pos;
    const uint32_t name_len = cur.take<uint32_t>();
    const std::string name = cur.take_string(name_len);
    const uint8_t dtype = cur.take<uint8_t>();
    const uint8_t ndim = cur.take<uint8_t>();
    std::vector<int> shape;
    int64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      const uint32_t dim = cur.take<uint32_t>();
      check(dim > 0, path, ": zero dimension in entry ", name, " at byte ", entry_at);
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    if (dtype == 1) {
      check(name == kConfigEntry, path, ": unexpected blob entry ", name,
            " at byte ", entry_at);
      check(ndim == 1, path, ": config blob must be rank 1");
      const char* p = cur.take_raw(static_cast<size_t>(numel));
      out.config = config_from_text(std::string(p, static_cast<size_t>(numel)), path);
      continue;
    }
    check(dtype == 0, path, ": unknown dtype code ", static_cast<int>(dtype),
          " in entry ", name, " at byte ", entry_at);
    check(out.entries.find(name) == out.entries.end(), path,
          ": duplicate entry name ", name, " at byte ", entry_at);
    const char* p = cur.take_raw(static_cast<size_t>(numel) * sizeof(float));
    std::vector<float> data(static_cast<size_t>(numel));
    std::memcpy(data.data(), p, static_cast<size_t>(numel) * sizeof(float));
    out.entries.emplace(name, Tensor(shape, std::move(data)));
  }
  check(cur.pos == buf.size() - 4, path, ": ", buf.size() - 4 - cur.pos,
        " unexpected trailing bytes at byte ", cur.pos);
  return out;
}

void load_into_store(const Checkpoint& ckpt, ParamStore& store) {
  for (const auto& [name, tensor] : ckpt.entries)
    check(store.contains(name), "checkpoint entry ", name,
          " has no matching parameter in this model");
  for (auto& [name, entry] : store) {
    auto it = ckpt.entries.find(name);
    check(it != ckpt.entries.end(), "checkpoint is missing parameter ", name);
    check(it->second.same_shape(entry.tensor), "checkpoint parameter ", name,
          " has shape ", it->second.shape_str(), ", model expects ",
          entry.tensor.shape_str());
    const bool trainable = entry.trainable;
    entry.tensor = it->second;
    entry.tensor.set_requires_grad(trainable);
  }
}

Tensor to_grayscale(const Tensor& image) {
  check(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
        "to_grayscale: image must be (1,H,W) or (3,H,W), got ", image.shape_str());
  if (image.dim(0) == 1) return image;
  const int h = image.dim(1), w = image.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor gray({1, h, w});
  for (int64_t i = 0; i < hw; ++i)
    gray[i] = 0.299f * image[i] + 0.587f * image[hw + i] + 0.114f * image[2 * hw + i];
  return gray;
}

Tensor flow_to_color(const Tensor& flow, float max_mag) {
  check(flow.rank() == 3 && flow.dim(0) == 2, "flow_to_color: flow must be (2,H,W), "
        "got ", flow.shape_str());
  const int h = flow.dim(1), w = flow.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  if (max_mag <= 0.0f) {
    float best = 0.0f;
    for (int64_t i = 0; i < hw; ++i) {
      const float m = std::hypot(flow[i], flow[hw + i]);
      if (m > best) best = m;
    }
    max_mag = best > 0.0f ? best : 1.0f;
  }
  Tensor out({3, h, w});
  for (int64_t i = 0; i < hw; ++i) {
    const float u = flow[i], v = flow[hw + i];
    const float mag = std::hypot(u, v);
    const float sat = std::min(1.0f, mag / max_mag);
    // hue in [0,6): atan2 range mapped onto the wheel
    float hue = static_cast<float>(std::atan2(v, u)) / 3.14159265358979323846f;
    hue = (hue + 1.0f) * 3.0f;
    if (hue >= 6.0f) hue = 0.0f;
    const int sector = static_cast<int>(hue);
    const float frac = hue - static_cast<float>(sector);
    const float p = 1.0f - sat;
    const float q = 1.0f - sat * frac;
    const float t = 1.0f - sat * (1.0f - frac);
    float r, g, b;
    switch (sector) {
      case 0: r = 1, g = t, b = p; break;
      case 1: r = q, g = 1, b = p; break;
      case 2: r = p, g = 1, b = t; break;
      case 3: r = p, g = q, b = 1; break;
      case 4: r = t, g = p, b = 1; break;
      default: r = 1, g = p, b = q; break;
    }
    out[i] = r;
    out[hw + i] = g;
    out[2 * hw + i] = b;
  }
  return out;
}

Tensor motion_overlay(const Tensor& reference, const Tensor& sample) {
  const Tensor gray_ref = to_grayscale(reference);
  const Tensor gray_sample = to_grayscale(sample);
  check(gray_ref.same_shape(gray_sample), "motion_overlay: size mismatch ",
        reference.shape_str(), " vs ", sample.shape_str());
  const int h = gray_ref.dim(1), w = gray_ref.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({3, h, w});
  for (int64_t i = 0; i < hw; ++i) {
    out[i] = gray_sample[i];
    out[hw + i] = gray_ref[i];
    out[2 * hw + i] = gray_sample[i];
  }
  return out;
}

}  // namespace snapflow

#include "snapflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "snapflow/io.hpp"

namespace snapflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Bilinear read of a bitmap extended by zero. The blob keeps its outermost
// ring at exactly zero, so this extension is continuous.
float alpha_at(const Tensor& alpha, double bx, double by) {
  const int s = alpha.dim(0);
  if (bx <= -1.0 || by <= -1.0 || bx >= s || by >= s) return 0.0f;
  const int x0 = static_cast<int>(std::floor(bx));
  const int y0 = static_cast<int>(std::floor(by));
  const double fx = bx - x0, fy = by - y0;
  auto at = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= s || y >= s) return 0.0;
    return alpha[static_cast<int64_t>(y) * s + x];
  };
  const double v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
                   fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
  return static_cast<float>(v);
}

bool covers(const Sprite& sp, const Affine& inv, double px, double py) {
  double qx, qy;
  inv.apply(px, py, &qx, &qy);
  return alpha_at(sp.alpha, qx - sp.ox, qy - sp.oy) > 0.0f;
}

struct ScenePoses {
  std::vector<Affine> fwd, inv;
};

ScenePoses poses_at(const SpriteScene& scene, int t) {
  ScenePoses p;
  for (const Sprite& sp : scene.sprites) {
    p.fwd.push_back(sp.pose(t));
    p.inv.push_back(p.fwd.back().inverse());
  }
  return p;
}

// Topmost sprite covering each integer pixel at frame t, -1 for background.
std::vector<int> owner_map(const SpriteScene& scene, const ScenePoses& poses) {
  std::vector<int> owners(static_cast<size_t>(scene.height) * scene.width, -1);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const size_t i = static_cast<size_t>(y) * scene.width + x;
      for (int s = static_cast<int>(scene.sprites.size()) - 1; s >= 0; --s) {
        if (covers(scene.sprites[static_cast<size_t>(s)],
                   poses.inv[static_cast<size_t>(s)], x, y)) {
          owners[i] = s;
          break;
        }
      }
    }
  return owners;
}

// Dense flow on the frame the owner map belongs to. motion_of(s, x, y) gives
// the owner's displacement at a pixel; uncovered pixels are background, 0.
template <typename MotionFn>
Tensor fill_flow(const SpriteScene& scene, const std::vector<int>& owners,
                 MotionFn motion_of) {
  const int h = scene.height, w = scene.width;
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor flow({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int64_t i = static_cast<int64_t>(y) * w + x;
      const int s = owners[static_cast<size_t>(i)];
      if (s < 0) continue;
      double ux, uy;
      motion_of(s, static_cast<double>(x), static_cast<double>(y), &ux, &uy);
      flow[i] = static_cast<float>(ux);
      flow[hw + i] = static_cast<float>(uy);
    }
  return flow;
}

std::string seq_dir_name(const std::string& root, size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%04zu", index);
  return root + "/" + buf;
}

std::string numbered(const std::string& dir, const char* stem, int index,
                     const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, index, ext);
  return dir + "/" + buf;
}

int manifest_int(const std::map<std::string, std::string>& kv,
                 const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  check(it != kv.end(), path, ": manifest is missing key ", key);
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    check(false, path, ": manifest key ", key, " is not an integer: ", it->second);
  }
  return 0;
}

uint32_t read_be32(const std::vector<char>& buf, size_t at,
                   const std::string& path) {
  check(at + 4 <= buf.size(), path, ": truncated at byte ", at);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + at);
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

}  // namespace

Affine Affine::inverse() const {
  const double det = a * d - b * c;
  check(std::abs(det) > 1e-12, "affine map is singular");
  Affine inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

Affine Sprite::pose(int t) const {
  Affine m;
  m.tx = vx * t;
  m.ty = vy * t;
  return m;
}

Tensor affine_flow_field(const Affine& map, int height, int width) {
  check(height > 0 && width > 0, "affine_flow_field: bad size ", height, "x", width);
  Tensor flow({2, height, width});
  const int64_t hw = static_cast<int64_t>(height) * width;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double px, py;
      map.apply(x, y, &px, &py);
      const int64_t i = static_cast<int64_t>(y) * width + x;
      flow[i] = static_cast<float>(px - x);
      flow[hw + i] = static_cast<float>(py - y);
    }
  return flow;
}

SpriteScene sample_scene(const SceneParams& params, Rng& rng) {
  return sample_scene(params, rng, {});
}

SpriteScene sample_scene(const SceneParams& params, Rng& rng,
                         const std::vector<Tensor>& bitmap_pool) {
  check(params.width >= 32 && params.height >= 32, "canvas too small");
  check(!bitmap_pool.empty() ||
            params.max_bitmap + 2 * params.margin <
                std::min(params.width, params.height),
        "bitmaps do not fit the canvas with the requested margin");
  check(params.min_sprites >= 1 && params.max_sprites >= params.min_sprites,
        "bad sprite count range");

  SpriteScene scene;
  scene.height = params.height;
  scene.width = params.width;
  scene.frames = params.frames;

  const int count = rng.uniform_int(params.min_sprites, params.max_sprites);
  for (int i = 0; i < count; ++i) {
    Sprite sp;
    if (!bitmap_pool.empty()) {
      const Tensor& pick = bitmap_pool[static_cast<size_t>(rng.uniform_int(
          0, static_cast<int>(bitmap_pool.size()) - 1))];
      check(pick.rank() == 2 && pick.dim(0) == pick.dim(1),
            "pool bitmaps must be square (S,S), got ", pick.shape_str());
      const int s = pick.dim(0);
      check(s + 2 * params.margin < std::min(params.width, params.height),
            "pool bitmap size ", s, " does not fit the canvas");
      sp.alpha = Tensor({s, s});
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          // force the two outermost rings to zero so the pasted bitmap
          // still falls off smoothly inside its own rectangle
          const bool rim = y < 2 || x < 2 || y >= s - 2 || x >= s - 2;
          sp.alpha[static_cast<int64_t>(y) * s + x] =
              rim ? 0.0f
                  : std::clamp(pick[static_cast<int64_t>(y) * s + x], 0.0f,
                               1.0f);
        }
      for (float& t : sp.tint) t = static_cast<float>(rng.uniform(0.35, 1.0));
      scene.sprites.push_back(std::move(sp));
      continue;
    }
    const int s = rng.uniform_int(params.min_bitmap, params.max_bitmap);
    sp.alpha = Tensor({s, s});
    const double half = (s - 1) / 2.0;
    const double reach = half - 1.5; // keeps the outermost ring at zero
    const int bumps = rng.uniform_int(2, 4);
    struct Bump {
      double cx, cy, r, amp;
    };
    std::vector<Bump> shape;
    shape.push_back({half, half, reach * rng.uniform(0.8, 1.0),
                     rng.uniform(0.7, 1.0)});
    for (int b = 1; b < bumps; ++b) {
      const double r = reach * rng.uniform(0.35, 0.6);
      const double ang = rng.uniform(0.0, 2.0 * kPi);
      const double dist = rng.uniform(0.0, reach - r);
      shape.push_back({half + dist * std::cos(ang), half + dist * std::sin(ang), r,
                       rng.uniform(0.5, 1.0)});
    }
    const double fu = rng.uniform(0.5, 2.5), fv = rng.uniform(0.5, 2.5);
    const double gu = rng.uniform(0.5, 2.5), gv = rng.uniform(0.5, 2.5);
    const double ph1 = rng.uniform(0.0, 2.0 * kPi), ph2 = rng.uniform(0.0, 2.0 * kPi);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double v = 0.0;
        for (const Bump& b : shape) {
          const double dx = x - b.cx, dy = y - b.cy;
          const double q = 1.0 - (dx * dx + dy * dy) / (b.r * b.r);
          if (q > 0.0) v += b.amp * q * q;
        }
        v = std::min(1.0, v);
        const double tex =
            0.6 + 0.4 * std::cos(2.0 * kPi * (fu * x + fv * y) / s + ph1) *
                      std::cos(2.0 * kPi * (gu * x + gv * y) / s + ph2);
        sp.alpha[static_cast<int64_t>(y) * s + x] = static_cast<float>(v * tex);
      }
    for (float& t : sp.tint) t = static_cast<float>(rng.uniform(0.35, 1.0));
    scene.sprites.push_back(std::move(sp));
  }

  // Integer velocity candidates inside the speed band.
  std::vector<std::pair<int, int>> lattice;
  const int vmax = static_cast<int>(std::floor(params.max_speed));
  for (int vy = -vmax; vy <= vmax; ++vy)
    for (int vx = -vmax; vx <= vmax; ++vx) {
      const double norm = std::hypot(vx, vy);
      if (norm >= params.min_speed && norm <= params.max_speed)
        lattice.push_back({vx, vy});
    }
  check(!lattice.empty(), "no integer velocity has norm in [",
        params.min_speed, ", ", params.max_speed, "]");

  double speed_hi = params.max_speed;
  for (int attempt = 0;; ++attempt) {
    check(attempt < 1000, "scene sampling failed to place ", count,
          " sprites on a ", params.width, "x", params.height, " canvas");
    // Crowded canvases are easier to satisfy at lower speeds.
    if (attempt > 0 && attempt % 200 == 0)
      speed_hi = std::max(speed_hi * 0.85, params.min_speed + 0.1);

    bool ok = true;
    for (Sprite& sp : scene.sprites) {
      const int s = sp.alpha.dim(0);
      sp.ox = rng.uniform_int(params.margin, params.width - s - params.margin);
      sp.oy = rng.uniform_int(params.margin, params.height - s - params.margin);
      for (int tries = 0;; ++tries) {
        check(tries < 100, "speed band [", params.min_speed, ", ", speed_hi,
              "] holds no integer velocity");
        const auto [vx, vy] = lattice[static_cast<size_t>(rng.uniform_int(
            0, static_cast<int>(lattice.size()) - 1))];
        if (std::hypot(vx, vy) > speed_hi) continue;
        sp.vx = vx;
        sp.vy = vy;
        break;
      }
    }

    // Bitmaps stay separated at t=0 so each sprite sits on clean background.
    for (size_t i = 0; i < scene.sprites.size() && ok; ++i)
      for (size_t j = i + 1; j < scene.sprites.size() && ok; ++j) {
        const Sprite &a = scene.sprites[i], &b = scene.sprites[j];
        const int sa = a.alpha.dim(0), sb = b.alpha.dim(0);
        const bool apart_x = a.ox + sa + params.gap <= b.ox ||
                             b.ox + sb + params.gap <= a.ox;
        const bool apart_y = a.oy + sa + params.gap <= b.oy ||
                             b.oy + sb + params.gap <= a.oy;
        if (!apart_x && !apart_y) ok = false;
        const double rel = std::hypot(a.vx - b.vx, a.vy - b.vy);
        if (rel < params.min_relative_speed) ok = false;
      }

    // Sprites never leave the canvas: the transformed bitmap rectangle must
    // respect the margin at every frame.
    for (const Sprite& sp : scene.sprites) {
      if (!ok) break;
      const int s = sp.alpha.dim(0);
      for (int t = 0; t <= params.frames && ok; ++t) {
        const Affine pose = sp.pose(t);
        const double xs[2] = {static_cast<double>(sp.ox),
                              static_cast<double>(sp.ox + s - 1)};
        const double ys[2] = {static_cast<double>(sp.oy),
                              static_cast<double>(sp.oy + s - 1)};
        for (double cx : xs)
          for (double cy : ys) {
            double px, py;
            pose.apply(cx, cy, &px, &py);
            if (px < params.margin || px > params.width - 1 - params.margin ||
                py < params.margin || py > params.height - 1 - params.margin)
              ok = false;
          }
      }
    }
    if (ok) break;
  }
  return scene;
}

Tensor render_frame(const SpriteScene& scene, int t) {
  check(t >= 0 && t <= scene.frames, "render_frame: t=", t, " outside [0,",
        scene.frames, "]");
  const ScenePoses poses = poses_at(scene, t);
  const int h = scene.height, w = scene.width;
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor frame({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int64_t i = static_cast<int64_t>(y) * w + x;
      for (int s = static_cast<int>(scene.sprites.size()) - 1; s >= 0; --s) {
        const Sprite& sp = scene.sprites[static_cast<size_t>(s)];
        double qx, qy;
        poses.inv[static_cast<size_t>(s)].apply(x, y, &qx, &qy);
        const float a = alpha_at(sp.alpha, qx - sp.ox, qy - sp.oy);
        if (a > 0.0f) {
          for (int c = 0; c < 3; ++c) frame[c * hw + i] = sp.tint[c] * a;
          break;
        }
      }
    }
  return frame;
}

Tensor ground_truth_forward_flow(const SpriteScene& scene, int t) {
  check(t >= 1 && t <= scene.frames, "flow step t=", t, " outside [1,",
        scene.frames, "]");
  const ScenePoses at0 = poses_at(scene, 0);
  const ScenePoses att = poses_at(scene, t);
  const std::vector<int> owners = owner_map(scene, at0);
  return fill_flow(scene, owners,
                   [&](int s, double x, double y, double* ux, double* uy) {
                     double px, py;
                     att.fwd[static_cast<size_t>(s)].apply(x, y, &px, &py);
                     *ux = px - x;
                     *uy = py - y;
                   });
}

Tensor ground_truth_backward_flow(const SpriteScene& scene, int t) {
  check(t >= 1 && t <= scene.frames, "flow step t=", t, " outside [1,",
        scene.frames, "]");
  const ScenePoses att = poses_at(scene, t);
  const std::vector<int> owners = owner_map(scene, att);
  return fill_flow(scene, owners,
                   [&](int s, double x, double y, double* ux, double* uy) {
                     double qx, qy;
                     att.inv[static_cast<size_t>(s)].apply(x, y, &qx, &qy);
                     *ux = qx - x;
                     *uy = qy - y;
                   });
}

OracleMasks occlusion_oracle(const SpriteScene& scene, int t) {
  check(t >= 1 && t <= scene.frames, "oracle step t=", t, " outside [1,",
        scene.frames, "]");
  const ScenePoses at0 = poses_at(scene, 0);
  const ScenePoses att = poses_at(scene, t);
  const std::vector<int> own0 = owner_map(scene, at0);
  const std::vector<int> ownt = owner_map(scene, att);
  const int h = scene.height, w = scene.width;
  const int n = static_cast<int>(scene.sprites.size());

  OracleMasks masks{Tensor({1, h, w}), Tensor({1, h, w})};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int64_t i = static_cast<int64_t>(y) * w + x;

      // Reference side: is frame-0 pixel x still visible at frame t?
      {
        const int s = own0[static_cast<size_t>(i)];
        bool visible = true;
        if (s < 0) {
          visible = ownt[static_cast<size_t>(i)] < 0;
        } else {
          double px, py;
          att.fwd[static_cast<size_t>(s)].apply(x, y, &px, &py);
          if (px < 0.0 || px > w - 1.0 || py < 0.0 || py > h - 1.0) visible = false;
          for (int above = s + 1; above < n && visible; ++above)
            if (covers(scene.sprites[static_cast<size_t>(above)],
                       att.inv[static_cast<size_t>(above)], px, py))
              visible = false;
        }
        masks.reference[i] = visible ? 1.0f : 0.0f;
      }

      // Target side: does frame-t pixel x exist in frame 0?
      {
        const int s = ownt[static_cast<size_t>(i)];
        bool visible = true;
        if (s < 0) {
          visible = own0[static_cast<size_t>(i)] < 0;
        } else {
          double qx, qy;
          att.inv[static_cast<size_t>(s)].apply(x, y, &qx, &qy);
          if (qx < 0.0 || qx > w - 1.0 || qy < 0.0 || qy > h - 1.0) visible = false;
          for (int above = s + 1; above < n && visible; ++above)
            if (covers(scene.sprites[static_cast<size_t>(above)],
                       at0.inv[static_cast<size_t>(above)], qx, qy))
              visible = false;
        }
        masks.target[i] = visible ? 1.0f : 0.0f;
      }
    }
  return masks;
}

Sequence generate_sequence(const SpriteScene& scene) {
  Sequence seq;
  for (int t = 0; t <= scene.frames; ++t) seq.frames.push_back(render_frame(scene, t));
  for (int t = 1; t <= scene.frames; ++t) {
    seq.forward_flow.push_back(ground_truth_forward_flow(scene, t));
    seq.backward_flow.push_back(ground_truth_backward_flow(scene, t));
    OracleMasks masks = occlusion_oracle(scene, t);
    seq.visible_reference.push_back(std::move(masks.reference));
    seq.visible_target.push_back(std::move(masks.target));
  }
  return seq;
}

Sequence generate_sequence(const SceneParams& params, Rng& rng) {
  const SpriteScene scene = sample_scene(params, rng);
  return generate_sequence(scene);
}

void write_dataset(const std::string& dir, const std::string& split,
                   const std::vector<Sequence>& sequences) {
  check(!sequences.empty(), "write_dataset: no sequences for split ", split);
  const std::string root = dir + "/" + split;
  std::filesystem::create_directories(root);

  const int frames = static_cast<int>(sequences.front().forward_flow.size());
  const int h = sequences.front().frames.front().dim(1);
  const int w = sequences.front().frames.front().dim(2);

  std::map<std::string, std::string> manifest;
  manifest["count"] = std::to_string(sequences.size());
  manifest["frames"] = std::to_string(frames);
  manifest["height"] = std::to_string(h);
  manifest["width"] = std::to_string(w);
  std::string text;
  for (const auto& [k, v] : manifest) text += k + " = " + v + "\n";
  std::ofstream mf(root + "/manifest.txt");
  check(mf.good(), "cannot write ", root, "/manifest.txt");
  mf << text;
  mf.close();

  for (size_t i = 0; i < sequences.size(); ++i) {
    const Sequence& seq = sequences[i];
    check(static_cast<int>(seq.forward_flow.size()) == frames,
          "write_dataset: sequence ", i, " has ", seq.forward_flow.size(),
          " flow steps, manifest says ", frames);
    const std::string sd = seq_dir_name(root, i);
    std::filesystem::create_directories(sd);
    for (int t = 0; t <= frames; ++t)
      png_write(numbered(sd, "frame", t, "png"), seq.frames[static_cast<size_t>(t)]);
    for (int t = 1; t <= frames; ++t) {
      const size_t k = static_cast<size_t>(t - 1);
      flo_write(numbered(sd, "gt_fwd", t, "flo"), seq.forward_flow[k]);
      flo_write(numbered(sd, "gt_bwd", t, "flo"), seq.backward_flow[k]);
      png_write(numbered(sd, "vis_ref", t, "png"), seq.visible_reference[k]);
      png_write(numbered(sd, "vis_tgt", t, "png"), seq.visible_target[k]);
    }
  }
}

Sequence read_sequence(const std::string& seq_dir, int frames) {
  Sequence seq;
  for (int t = 0; t <= frames; ++t)
    seq.frames.push_back(png_read(numbered(seq_dir, "frame", t, "png")));
  for (int t = 1; t <= frames; ++t) {
    seq.forward_flow.push_back(flo_read(numbered(seq_dir, "gt_fwd", t, "flo")));
    seq.backward_flow.push_back(flo_read(numbered(seq_dir, "gt_bwd", t, "flo")));
    seq.visible_reference.push_back(png_read(numbered(seq_dir, "vis_ref", t, "png")));
    seq.visible_target.push_back(png_read(numbered(seq_dir, "vis_tgt", t, "png")));
  }
  return seq;
}

namespace {

struct ManifestInfo {
  int count, frames, height, width;
};

ManifestInfo read_manifest(const std::string& root) {
  const std::string mpath = root + "/manifest.txt";
  std::ifstream mf(mpath);
  check(mf.good(), "cannot open ", mpath);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find(" = ");
    check(eq != std::string::npos, mpath, ": malformed line: ", line);
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  ManifestInfo info;
  info.count = manifest_int(kv, "count", mpath);
  info.frames = manifest_int(kv, "frames", mpath);
  info.height = manifest_int(kv, "height", mpath);
  info.width = manifest_int(kv, "width", mpath);
  check(info.count > 0 && info.frames > 0, mpath, ": bad count/frames");
  return info;
}

}  // namespace

std::vector<Sequence> read_dataset(const std::string& dir,
                                   const std::string& split) {
  const std::string root = dir + "/" + split;
  const ManifestInfo info = read_manifest(root);
  std::vector<Sequence> out;
  out.reserve(static_cast<size_t>(info.count));
  for (int i = 0; i < info.count; ++i) {
    Sequence seq =
        read_sequence(seq_dir_name(root, static_cast<size_t>(i)), info.frames);
    check(seq.frames.front().dim(1) == info.height &&
              seq.frames.front().dim(2) == info.width,
          root, ": sequence ", i, " is ", seq.frames.front().shape_str(),
          ", manifest says ", info.height, "x", info.width);
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::vector<Tensor>> read_dataset_frames(const std::string& dir,
                                                     const std::string& split) {
  const std::string root = dir + "/" + split;
  const ManifestInfo info = read_manifest(root);
  std::vector<std::vector<Tensor>> out;
  out.reserve(static_cast<size_t>(info.count));
  for (int i = 0; i < info.count; ++i) {
    const std::string sd = seq_dir_name(root, static_cast<size_t>(i));
    std::vector<Tensor> frames;
    for (int t = 0; t <= info.frames; ++t)
      frames.push_back(png_read(numbered(sd, "frame", t, "png")));
    out.push_back(std::move(frames));
  }
  return out;
}

void make_dataset(const std::string& dir, const DatasetParams& params) {
  Rng root(params.seed);
  Rng train_rng = root.split(0x7472u); // distinct streams per split
  Rng test_rng = root.split(0x7465u);

  std::vector<Sequence> train;
  for (int i = 0; i < params.train_count; ++i) {
    Rng rng = train_rng.split(static_cast<uint64_t>(i));
    train.push_back(
        generate_sequence(sample_scene(params.scene, rng, params.bitmap_pool)));
  }
  write_dataset(dir, "train", train);
  train.clear();

  std::vector<Sequence> test;
  for (int i = 0; i < params.test_count; ++i) {
    Rng rng = test_rng.split(static_cast<uint64_t>(i));
    test.push_back(
        generate_sequence(sample_scene(params.scene, rng, params.bitmap_pool)));
  }
  write_dataset(dir, "test", test);
}

Tensor ingest_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open ", path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  const uint32_t magic = read_be32(buf, 0, path);

  if (magic == 0x00000803u) {
    const uint32_t n = read_be32(buf, 4, path);
    const uint32_t h = read_be32(buf, 8, path);
    const uint32_t w = read_be32(buf, 12, path);
    check(n > 0 && h > 0 && w > 0, path, ": zero dimension in header");
    const size_t expect = 16 + static_cast<size_t>(n) * h * w;
    check(buf.size() == expect, path, ": payload should be ",
          static_cast<size_t>(n) * h * w, " bytes starting at byte 16, file has ",
          buf.size() - std::min<size_t>(buf.size(), 16), " payload bytes");
    Tensor out({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + 16);
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = static_cast<float>(p[i]) / 255.0f;
    return out;
  }
  if (magic == 0x00000801u) {
    const uint32_t n = read_be32(buf, 4, path);
    check(n > 0, path, ": zero item count in header");
    const size_t expect = 8 + static_cast<size_t>(n);
    check(buf.size() == expect, path, ": payload should be ", n,
          " bytes starting at byte 8, file has ",
          buf.size() - std::min<size_t>(buf.size(), 8), " payload bytes");
    Tensor out({static_cast<int>(n)});
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + 8);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(p[i]);
    return out;
  }
  check(false, path, ": unrecognized IDX magic 0x", str_cat(std::hex, magic),
        " at byte 0 (expected 0x00000803 images or 0x00000801 labels)");
  return Tensor();
}

}  // namespace snapflow

#pragma once

#include <string>
#include <vector>

#include "snapflow/rng.hpp"
#include "snapflow/tensor.hpp"

namespace snapflow {

// 2-D affine map p -> (a*x + b*y + tx, c*x + d*y + ty) in pixel coordinates.
struct Affine {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0, tx = 0.0, ty = 0.0;

  void apply(double x, double y, double* ox, double* oy) const {
    *ox = a * x + b * y + tx;
    *oy = c * x + d * y + ty;
  }
  Affine inverse() const;
};

// A sprite is a square alpha bitmap pasted at an integer offset, tinted per
// channel. Pixels with alpha > 0 belong to the sprite; the skirt of the blob
// falls smoothly to exactly 0 before the bitmap edge. The sprite translates
// by (vx, vy) per frame. Velocities are whole pixels, so every frame shows
// the bitmap on the integer grid and flows, occlusion and warps of ground
// truth stay exact instead of leaking through bilinear blends at the rim.
struct Sprite {
  Tensor alpha;       // (S,S), values in [0,1], zero on the outermost ring
  float tint[3];      // per-channel color, each in (0,1]
  int ox = 0, oy = 0; // integer paste offset of the bitmap in frame 0
  double vx = 0.0, vy = 0.0; // integer-valued, pixels per frame

  // Canvas-to-canvas map from frame-0 position to frame-t position.
  Affine pose(int t) const;
};

// Later sprites draw on top of earlier ones.
struct SpriteScene {
  int height = 0, width = 0, frames = 0; // frames = number of flow steps T
  std::vector<Sprite> sprites;
};

struct SceneParams {
  int height = 64, width = 64, frames = 4;
  int min_sprites = 1, max_sprites = 2;
  int min_bitmap = 16, max_bitmap = 24;
  // Velocity is an integer vector drawn uniformly from the lattice points
  // with euclidean norm in [min_speed, max_speed].
  double min_speed = 1.4, max_speed = 3.0;
  double min_relative_speed = 1.0; // between any sprite pair
  int margin = 3;                  // sprites keep this far from the canvas edge
  int gap = 4;                     // bitmap separation at t=0
};

SpriteScene sample_scene(const SceneParams& params, Rng& rng);
// Draws sprite shapes from the given pool of square (S,S) alpha bitmaps
// instead of generating blobs; the outermost two rings are forced to zero.
SpriteScene sample_scene(const SceneParams& params, Rng& rng,
                         const std::vector<Tensor>& bitmap_pool);

// Flow field of a global affine motion: out(x) = A(x) - x, shape (2,H,W)
// with channel 0 = dx and channel 1 = dy.
Tensor affine_flow_field(const Affine& map, int height, int width);

// Everything derivable from a scene at one frame index t in [1, frames].
Tensor render_frame(const SpriteScene& scene, int t); // (3,H,W) in [0,1]

// Dense ground-truth flows. Covered pixels carry their owner's analytic
// motion; the static background is flow 0.
Tensor ground_truth_forward_flow(const SpriteScene& scene, int t);  // on frame-0 grid
Tensor ground_truth_backward_flow(const SpriteScene& scene, int t); // on frame-t grid

// Visibility masks (1,H,W), 1 = visible in the other frame, 0 = occluded.
// reference lives on the frame-0 grid, target on the frame-t grid.
struct OracleMasks {
  Tensor reference;
  Tensor target;
};
OracleMasks occlusion_oracle(const SpriteScene& scene, int t);

// One generated example: frames[0..T] plus per-step ground truth for
// t = 1..T (index i holds step t = i+1).
struct Sequence {
  std::vector<Tensor> frames;       // T+1 images (3,H,W)
  std::vector<Tensor> forward_flow; // T fields (2,H,W)
  std::vector<Tensor> backward_flow;
  std::vector<Tensor> visible_reference; // T masks (1,H,W)
  std::vector<Tensor> visible_target;
};

Sequence generate_sequence(const SpriteScene& scene);
Sequence generate_sequence(const SceneParams& params, Rng& rng);

// On-disk dataset layout, rooted at <dir>/<split>:
//   manifest.txt                key = value: count, frames, height, width
//   seq_0000/frame_0000.png     T+1 frames
//   seq_0000/gt_fwd_0001.flo    flow from frame 0 to frame t, t = 1..T
//   seq_0000/gt_bwd_0001.flo    flow from frame t back to frame 0
//   seq_0000/vis_ref_0001.png   visibility masks, 255 = visible
//   seq_0000/vis_tgt_0001.png
void write_dataset(const std::string& dir, const std::string& split,
                   const std::vector<Sequence>& sequences);
std::vector<Sequence> read_dataset(const std::string& dir,
                                   const std::string& split);
Sequence read_sequence(const std::string& seq_dir, int frames);

// Just the T+1 images of every sequence; training is unsupervised and never
// touches the ground-truth files.
std::vector<std::vector<Tensor>> read_dataset_frames(const std::string& dir,
                                                     const std::string& split);

struct DatasetParams {
  SceneParams scene;
  int train_count = 500;
  int test_count = 50;
  uint64_t seed = 1;
  // Optional sprite shapes (square alpha bitmaps); empty means procedural
  // blobs. See sample_scene.
  std::vector<Tensor> bitmap_pool;
};

// Generates and writes both splits under dir/train and dir/test.
void make_dataset(const std::string& dir, const DatasetParams& params);

// IDX container (the MNIST family): u32 big-endian magic, then big-endian
// dimension sizes, then u8 payload. Magic 0x00000803 yields images (N,1,H,W)
// scaled to [0,1]; magic 0x00000801 yields labels (N).
Tensor ingest_idx(const std::string& path);

}  // namespace snapflow

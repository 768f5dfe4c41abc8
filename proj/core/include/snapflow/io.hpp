#pragma once

#include <map>
#include <string>

#include "snapflow/param_store.hpp"
#include "snapflow/tensor.hpp"

namespace snapflow {

// All on-disk formats are little-endian (the build targets x86-64).

// Middlebury .flo: f32 magic 202021.25, width i32, height i32, then
// row-major interleaved (u,v) f32 pairs. In memory flows are planar (2,H,W)
// with channel 0 = u = dx and channel 1 = v = dy.
void flo_write(const std::string& path, const Tensor& flow);
Tensor flo_read(const std::string& path);

// 8-bit PNG. image is (1,H,W) grayscale or (3,H,W) RGB with values in [0,1];
// writing rounds to the nearest of 256 levels, reading maps k -> k/255.
void png_write(const std::string& path, const Tensor& image);
Tensor png_read(const std::string& path);

// Checkpoint container: magic "IFLW", version u32, entry count u32, then per
// entry (name_len u32, name, dtype u8, ndim u8, dims u32[ndim], payload),
// finished by a CRC32 of all preceding bytes. dtype 0 holds f32 tensors;
// dtype 1 holds raw byte blobs, used for the "__config" text entry.
struct Checkpoint {
  std::map<std::string, Tensor> entries;
  std::map<std::string, std::string> config;
};

void checkpoint_write(const std::string& path,
                      const std::map<std::string, Tensor>& entries,
                      const std::map<std::string, std::string>& config);
Checkpoint checkpoint_read(const std::string& path);

// Copies checkpoint tensors into an existing store; every store entry must be
// present with a matching shape (extra checkpoint names are rejected).
void load_into_store(const Checkpoint& ckpt, ParamStore& store);

// Flow visualization on the standard color wheel: hue from atan2(v,u),
// saturation from magnitude / max_mag (clamped), zero flow renders white.
// max_mag <= 0 picks the field's own maximum magnitude.
Tensor flow_to_color(const Tensor& flow, float max_mag = 0.0f);

// Grayscale anaglyph of two frames: R = B = gray(sample), G = gray(reference).
// Identical frames render gray; motion shows as magenta/green fringes.
Tensor motion_overlay(const Tensor& reference, const Tensor& sample);

// Rec. 601 luma; accepts (1,H,W) or (3,H,W).
Tensor to_grayscale(const Tensor& image);

}  // namespace snapflow

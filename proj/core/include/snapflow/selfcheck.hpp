#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace snapflow {

struct CheckItem {
  std::string name;
  bool passed = false;
  std::string detail;  // observed vs expected on failure, brief stats on pass
};

struct CheckSummary {
  std::vector<CheckItem> items;
  int instances = 0;  // randomized cases exercised

  bool all_passed() const;
  std::string text() const;  // one line per item plus a verdict
};

// Central finite differences (f64 accumulation, per-case step sizes) against
// the reverse-mode gradient of every primitive and every loss, on randomized
// small inputs built away from kinks. For losses with kinked interiors,
// elements whose measured curvature says the difference quotient itself is
// unreliable are skipped and counted. Relative-error bound 1e-4, widened to
// 1e-3 for batch_norm.
CheckSummary check_gradients(uint64_t seed = 2024, int instances_per_case = 5);

// Bilinear warping under integer flows against a direct index-lookup oracle,
// plus the zero-flow identity; both must match bit for bit.
CheckSummary check_warp_oracle(uint64_t seed = 2024, int images = 100);

// Visibility masks computed from ground-truth flows against the scene
// oracle, pooled over both grids and all steps. Positive class = occluded.
CheckSummary check_occlusion_f1(uint64_t seed = 2024, int sequences = 50,
                                float required_f1 = 0.90f);

}  // namespace snapflow

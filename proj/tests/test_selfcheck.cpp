#include "doctest.h"

#include "snapflow/selfcheck.hpp"

using namespace snapflow;

// Reduced-instance sweeps; the release gate runs the full-size versions.

TEST_CASE("gradient harness passes on a reduced sweep") {
  const CheckSummary summary = check_gradients(7, 1);
  INFO(summary.text());
  CHECK(summary.all_passed());
  CHECK(summary.instances > 30);
}

TEST_CASE("warp harness passes on a reduced sweep") {
  const CheckSummary summary = check_warp_oracle(7, 10);
  INFO(summary.text());
  CHECK(summary.all_passed());
}

TEST_CASE("occlusion harness passes on a reduced sweep") {
  const CheckSummary summary = check_occlusion_f1(7, 5);
  INFO(summary.text());
  CHECK(summary.all_passed());
}

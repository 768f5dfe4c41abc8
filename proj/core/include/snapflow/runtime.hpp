#pragma once

namespace snapflow {

// Pins the BLAS backend to a single thread so results are reproducible and
// per-sample loops stay cache-friendly. Safe to call more than once.
// Call this first thing in main: if the BLAS kernel dispatch went to a
// generic fallback (common under virtualization), the process restarts
// itself once via exec with OPENBLAS_CORETYPE set. Set that variable
// yourself to keep full control.
void pin_blas_threads();

// Hardware threads visible to this process (>= 1).
int hardware_threads();

}  // namespace snapflow

#pragma once

namespace snapflow {

// Identifier of the built tree (git describe when available).
const char* build_id();

}  // namespace snapflow

#pragma once

#include <cstddef>

namespace pbn {

/// Instrumentation totals for one forward pass or one engine invocation.
///
/// `peak_stored_states` counts network states retained for the backward pass
/// (the storage-policy footprint). Per-operation scratch tensors and the
/// cotangent vector are constant-size workspace, not stored states, and are
/// excluded from this gauge.
struct Counters {
  std::size_t peak_stored_states = 0;
  std::size_t operator_applications = 0;
  std::size_t fixed_point_inner_iterations = 0;
};

inline void count_ops(Counters* c, std::size_t n = 1) {
  if (c != nullptr) c->operator_applications += n;
}

inline void count_fp_iters(Counters* c, std::size_t n = 1) {
  if (c != nullptr) c->fixed_point_inner_iterations += n;
}

}  // namespace pbn

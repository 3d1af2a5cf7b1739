#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pbn/counters.hpp"
#include "pbn/tensor.hpp"

namespace pbn {

struct FixedPointConfig {
  std::size_t max_iters = 1;   // T; the loop runs exactly T steps when tolerance is 0
  double tolerance = 0.0;      // early exit when the update norm drops below this
  bool record_trace = false;
};

struct FixedPointResult {
  Tensor solution;
  std::size_t iterations_used = 0;
  double final_update_norm = 0.0;
  std::optional<std::vector<double>> trace;  // update norms, one per iteration
};

using ContractionMap = std::function<Tensor(const Tensor&)>;

/// Iterates x <- map(x) from x0 = z. For a contraction with factor rho the
/// iterate satisfies ||x_T - x*|| <= rho^T ||z - x*||. A non-finite iterate
/// raises a divergence error naming the iteration.
FixedPointResult fixed_point_solve(const ContractionMap& map, const Tensor& z,
                                   const FixedPointConfig& cfg,
                                   Counters* counters = nullptr);

struct ContractionVerdict {
  double bound = 0.0;
  double margin = 0.0;  // 1 - bound
  bool accepted = false;
};

/// Accepts iff the Lipschitz bound is strictly below 1.
ContractionVerdict check_contraction(double lipschitz_bound);

}  // namespace pbn

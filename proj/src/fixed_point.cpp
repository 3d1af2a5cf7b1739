#include "pbn/fixed_point.hpp"

#include <cmath>

#include "pbn/errors.hpp"

namespace pbn {

FixedPointResult fixed_point_solve(const ContractionMap& map, const Tensor& z,
                                   const FixedPointConfig& cfg, Counters* counters) {
  if (cfg.max_iters < 1) raise(ErrorKind::Validation, "fixed point needs max_iters >= 1");
  if (cfg.tolerance < 0.0 || !std::isfinite(cfg.tolerance)) {
    raise(ErrorKind::Validation, "fixed point tolerance must be finite and >= 0");
  }
  FixedPointResult res;
  if (cfg.record_trace) res.trace.emplace();
  Tensor x = z;
  for (std::size_t t = 0; t < cfg.max_iters; ++t) {
    Tensor next = map(x);
    count_fp_iters(counters);
    if (!next.finite()) {
      raise(ErrorKind::Divergence,
            "non-finite iterate at fixed-point iteration " + std::to_string(t));
    }
    res.final_update_norm = norm(next - x);
    res.iterations_used = t + 1;
    if (res.trace) res.trace->push_back(res.final_update_norm);
    x = std::move(next);
    if (cfg.tolerance > 0.0 && res.final_update_norm < cfg.tolerance) break;
  }
  res.solution = std::move(x);
  return res;
}

ContractionVerdict check_contraction(double lipschitz_bound) {
  if (lipschitz_bound < 0.0 || !std::isfinite(lipschitz_bound)) {
    raise(ErrorKind::Validation, "Lipschitz bound must be finite and >= 0");
  }
  ContractionVerdict v;
  v.bound = lipschitz_bound;
  v.margin = 1.0 - lipschitz_bound;
  v.accepted = lipschitz_bound < 1.0;
  return v;
}

}  // namespace pbn

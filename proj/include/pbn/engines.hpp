#pragma once

#include "pbn/network.hpp"

namespace pbn {

struct EngineDiagnostics {
  /// ||reverse state - reference state|| per state index, recorded when a
  /// store-all shadow reference is supplied (test mode).
  std::vector<std::pair<std::size_t, double>> shadow_residuals;
  /// Hybrid only: ||recalculated state - stored checkpoint|| measured just
  /// before each checkpoint replacement (requires measure_checkpoint_residuals).
  std::vector<std::pair<std::size_t, double>> checkpoint_residuals;
};

/// Per-layer parameter gradients plus the loss gradient with respect to the
/// network input. Counters cover the engine's own work; the forward pass that
/// produced the record is metered separately.
struct GradientReport {
  std::vector<LayerGrads> layer_grads;
  Tensor input_grad;
  EngineDiagnostics diagnostics;
  Counters counters;
};

struct EngineOptions {
  bool want_measurement_cotangents = false;
  const ForwardRecord* shadow_reference = nullptr;   // store-all run of the same input
  bool measure_checkpoint_residuals = false;
};

/// Reference engine: walks the chain backwards reading every stored state.
GradientReport backprop_standard(const Network& net, const ForwardRecord& record,
                                 const Tensor& loss_grad, const EngineOptions& opts = {});

/// Reverse-recalculation engine: recomputes each layer input from its output
/// through the layer inverse, keeping a constant number of states resident.
/// Refuses up front when the invertibility certificate fails.
GradientReport backprop_memory_efficient(const Network& net, const Tensor& x_final,
                                         const Tensor& loss_grad,
                                         const FixedPointConfig& inv,
                                         const EngineOptions& opts = {});

/// Reverse recalculation with stored checkpoints: whenever the target state
/// index was stored during the forward pass, the stored state replaces the
/// recalculated one, resetting accumulated inversion error at that index.
GradientReport backprop_hybrid(const Network& net, const ForwardRecord& record,
                               const Tensor& loss_grad, const FixedPointConfig& inv,
                               const EngineOptions& opts = {});

}  // namespace pbn

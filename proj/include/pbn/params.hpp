#pragma once

#include <string>

#include "pbn/engines.hpp"

namespace pbn {

enum class ParamField { Alpha, TermWeight, Design, Lambda, W1, W2 };

const char* param_field_name(ParamField f);

/// One contiguous slice of the flat real parameter vector.
struct ParamBlock {
  int group = -1;
  std::size_t layer = 0;  // representative (first) layer of the group
  ParamField field = ParamField::Alpha;
  std::size_t term = 0;   // fidelity term index for TermWeight / Design
  std::size_t offset = 0;
  std::size_t count = 0;
  std::string label;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;
};

/// Enumerates every learnable field once per parameter group, in layer order.
ParamLayout build_layout(const Network& net);

std::vector<double> collect_params(const Network& net, const ParamLayout& layout);

/// Rebuilds the network with the given flat parameters written back to every
/// layer of each group. Curvature and Lipschitz certificates are re-estimated
/// for the layers whose operators changed unless refresh_certificates is off.
Network with_params(const Network& net, const ParamLayout& layout,
                    const std::vector<double>& params, bool refresh_certificates = true,
                    int sigma_iters = 128, std::uint64_t sigma_seed = 0x51u);

/// Accumulates per-layer gradients into the flat layout. Gradients of shared
/// parameters are summed over the group's layers in reverse layer order.
std::vector<double> flatten_grads(const Network& net, const ParamLayout& layout,
                                  const GradientReport& report);

double l2_norm(const std::vector<double>& v);

}  // namespace pbn

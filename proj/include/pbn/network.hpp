#pragma once

#include <map>

#include "pbn/layers.hpp"

namespace pbn {

struct StoragePolicy {
  enum class Mode { StoreAll, StoreNone, CheckpointEveryK };
  Mode mode = Mode::StoreAll;
  std::size_t interval = 1;  // K, in layer units

  static StoragePolicy store_all() { return {Mode::StoreAll, 1}; }
  static StoragePolicy store_none() { return {Mode::StoreNone, 1}; }
  static StoragePolicy checkpoint_every(std::size_t k) {
    return {Mode::CheckpointEveryK, k};
  }
};

/// State indices retained by a policy over a chain of n_layers layers:
/// store-all keeps {0..N}, store-none keeps {0, N}, checkpointing keeps
/// multiples of K anchored at the input plus the output.
std::vector<std::size_t> stored_indices(const StoragePolicy& policy, std::size_t n_layers);

struct ForwardRecord {
  Tensor output;
  std::map<std::size_t, Tensor> stored;
  Counters counters;
};

struct Network {
  std::vector<Layer> layers;
};

/// Validates shape chaining and assigns fresh parameter groups to layers
/// that do not declare one.
Network make_network(std::vector<Layer> layers);

ForwardRecord forward(const Network& net, const Tensor& x0, const StoragePolicy& policy);

struct LayerCertificate {
  std::size_t index = 0;
  const char* kind = "";
  double bound = 0.0;
  bool certified = false;
  double margin = 0.0;
};

struct CertificateReport {
  std::vector<LayerCertificate> layers;
  bool all_certified = true;
  const LayerCertificate* first_failure() const;
};

/// Per-layer invertibility verdicts: gradient layers need
/// alpha * sigma_max(sum w_i A_i^H A_i) < 1, residual layers need their
/// certified Lipschitz bound < 1, prox layers are invertible outright
/// (the smooth prox additionally reports its forward-solve bound).
CertificateReport certify_invertible(const Network& net, int sigma_iters = 128,
                                     std::uint64_t seed = 0xCE27u);

}  // namespace pbn

#include "pbn/network.hpp"

#include <algorithm>

#include "pbn/errors.hpp"

namespace pbn {

std::vector<std::size_t> stored_indices(const StoragePolicy& policy, std::size_t n_layers) {
  std::vector<std::size_t> idx;
  switch (policy.mode) {
    case StoragePolicy::Mode::StoreAll:
      for (std::size_t i = 0; i <= n_layers; ++i) idx.push_back(i);
      break;
    case StoragePolicy::Mode::StoreNone:
      idx.push_back(0);
      if (n_layers > 0) idx.push_back(n_layers);
      break;
    case StoragePolicy::Mode::CheckpointEveryK: {
      if (policy.interval < 1) raise(ErrorKind::Validation, "checkpoint interval must be >= 1");
      for (std::size_t i = 0; i < n_layers; i += policy.interval) idx.push_back(i);
      idx.push_back(n_layers);
      break;
    }
  }
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

Network make_network(std::vector<Layer> layers) {
  if (layers.empty()) raise(ErrorKind::Validation, "network needs at least one layer");
  const Shape* current = nullptr;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Shape* s = layer_shape(layers[i]);
    if (s != nullptr) {
      if (current != nullptr && *current != *s) {
        raise(ErrorKind::Shape, "layer " + std::to_string(i) + " expects " +
                                    shape_str(*s) + " but the chain carries " +
                                    shape_str(*current));
      }
      current = s;
    }
  }
  int next_group = 0;
  for (const auto& l : layers) next_group = std::max(next_group, l.param_group + 1);
  for (auto& l : layers) {
    if (l.param_group < 0) l.param_group = next_group++;
  }
  return Network{std::move(layers)};
}

ForwardRecord forward(const Network& net, const Tensor& x0, const StoragePolicy& policy) {
  const std::size_t n = net.layers.size();
  const auto keep = stored_indices(policy, n);
  ForwardRecord rec;
  auto should_store = [&keep](std::size_t i) {
    return std::binary_search(keep.begin(), keep.end(), i);
  };
  if (should_store(0)) rec.stored.emplace(0, x0);
  rec.counters.peak_stored_states = rec.stored.size();
  Tensor x = x0;
  for (std::size_t k = 0; k < n; ++k) {
    Tensor next;
    try {
      next = layer_forward(net.layers[k], x, &rec.counters);
    } catch (const Error& e) {
      raise(e.kind(), "layer " + std::to_string(k) + ": " + e.what());
    }
    if (!next.finite()) {
      raise(ErrorKind::Divergence,
            "non-finite state leaving layer " + std::to_string(k));
    }
    x = std::move(next);
    if (should_store(k + 1)) rec.stored.emplace(k + 1, x);
    rec.counters.peak_stored_states =
        std::max(rec.counters.peak_stored_states, rec.stored.size());
  }
  rec.output = std::move(x);
  return rec;
}

const LayerCertificate* CertificateReport::first_failure() const {
  for (const auto& l : layers) {
    if (!l.certified) return &l;
  }
  return nullptr;
}

CertificateReport certify_invertible(const Network& net, int sigma_iters,
                                     std::uint64_t seed) {
  CertificateReport report;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    LayerCertificate cert;
    cert.index = i;
    cert.kind = layer_kind_name(layer);
    if (const auto* g = std::get_if<GradientLayer>(&layer.op)) {
      const double sigma = gradient_curvature_estimate(*g, sigma_iters, seed + i);
      cert.bound = g->alpha * sigma;
      cert.certified = cert.bound < 1.0;
    } else if (const auto* s = std::get_if<SmoothProxLayer>(&layer.op)) {
      // The inverse is explicit; the bound reported is the forward-solve
      // contraction factor, which the layer invariant keeps below 1.
      cert.bound = s->lambda * s->filter_norm_sq;
      cert.certified = cert.bound < 1.0;
    } else if (const auto* r = std::get_if<InvertibleResidualLayer>(&layer.op)) {
      cert.bound = residual_lipschitz_estimate(*r, sigma_iters, seed + i);
      cert.certified = cert.bound < 1.0;
    } else {
      cert.bound = 0.0;
      cert.certified = true;
    }
    cert.margin = 1.0 - cert.bound;
    report.all_certified = report.all_certified && cert.certified;
    report.layers.push_back(cert);
  }
  return report;
}

}  // namespace pbn

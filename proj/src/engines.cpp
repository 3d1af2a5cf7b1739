#include "pbn/engines.hpp"

#include <algorithm>

#include "pbn/errors.hpp"

namespace pbn {

namespace {

void check_report_finite(const GradientReport& report) {
  if (!report.input_grad.finite()) {
    raise(ErrorKind::Divergence, "non-finite input gradient");
  }
  for (std::size_t k = 0; k < report.layer_grads.size(); ++k) {
    const auto& g = report.layer_grads[k];
    bool ok = true;
    if (g.alpha && !std::isfinite(*g.alpha)) ok = false;
    if (g.lambda && !std::isfinite(*g.lambda)) ok = false;
    for (double w : g.term_weights) ok = ok && std::isfinite(w);
    for (const auto& d : g.design) {
      for (double w : d) ok = ok && std::isfinite(w);
    }
    if (g.w1 && !g.w1->finite()) ok = false;
    if (g.w2 && !g.w2->finite()) ok = false;
    if (!ok) {
      raise(ErrorKind::Divergence,
            "non-finite parameter gradient at layer " + std::to_string(k));
    }
  }
}

// Uses the certificate bounds maintained on the layers; fresh spectral
// estimates belong to certify_invertible, not to the per-call fast path.
double layer_certificate_bound(const Layer& layer) {
  if (const auto* g = std::get_if<GradientLayer>(&layer.op)) {
    return g->alpha * g->curvature_bound;
  }
  if (const auto* r = std::get_if<InvertibleResidualLayer>(&layer.op)) {
    return r->certified_bound;
  }
  return 0.0;  // prox kinds invert in closed form
}

void refuse_if_uncertified(const Layer& layer, std::size_t index) {
  const double bound = layer_certificate_bound(layer);
  if (!check_contraction(bound).accepted) {
    raise(ErrorKind::Certificate,
          "layer " + std::to_string(index) + " (" + layer_kind_name(layer) +
              ") not invertible: bound " + std::to_string(bound) + " >= 1");
  }
}

void record_shadow(EngineDiagnostics& diag, const EngineOptions& opts, std::size_t index,
                   const Tensor& state) {
  if (opts.shadow_reference == nullptr) return;
  const auto it = opts.shadow_reference->stored.find(index);
  if (it == opts.shadow_reference->stored.end()) return;
  diag.shadow_residuals.emplace_back(index, norm(state - it->second));
}

}  // namespace

GradientReport backprop_standard(const Network& net, const ForwardRecord& record,
                                 const Tensor& loss_grad, const EngineOptions& opts) {
  const std::size_t n = net.layers.size();
  for (std::size_t i = 0; i <= n; ++i) {
    if (record.stored.find(i) == record.stored.end()) {
      raise(ErrorKind::Validation,
            "standard engine needs a store-all record; state " + std::to_string(i) +
                " is missing");
    }
  }
  GradientReport report;
  report.layer_grads.resize(n);
  report.counters.peak_stored_states = record.counters.peak_stored_states;
  Tensor q = loss_grad;
  for (std::size_t k = n; k-- > 0;) {
    const Tensor& x_in = record.stored.at(k);
    const Tensor& x_out = record.stored.at(k + 1);
    VjpOptions vopts;
    vopts.output_hint = &x_out;
    vopts.want_measurement_cotangents = opts.want_measurement_cotangents;
    record_shadow(report.diagnostics, opts, k, x_in);
    auto res = layer_vjp(net.layers[k], x_in, q, vopts, &report.counters);
    report.layer_grads[k] = std::move(res.grads);
    q = std::move(res.input_grad);
  }
  report.input_grad = std::move(q);
  check_report_finite(report);
  return report;
}

GradientReport backprop_memory_efficient(const Network& net, const Tensor& x_final,
                                         const Tensor& loss_grad,
                                         const FixedPointConfig& inv,
                                         const EngineOptions& opts) {
  const std::size_t n = net.layers.size();
  for (std::size_t k = 0; k < n; ++k) refuse_if_uncertified(net.layers[k], k);
  GradientReport report;
  report.layer_grads.resize(n);
  // The engine keeps two states resident: the current reverse state and the
  // predecessor being recalculated. That pair is the whole footprint.
  report.counters.peak_stored_states = 2;
  Tensor x_hat = x_final;
  Tensor q = loss_grad;
  for (std::size_t k = n; k-- > 0;) {
    Tensor x_prev;
    try {
      x_prev = layer_inverse(net.layers[k], x_hat, inv, &report.counters);
    } catch (const Error& e) {
      raise(e.kind(), "reverse recalculation at layer " + std::to_string(k) + ": " +
                          e.what());
    }
    record_shadow(report.diagnostics, opts, k, x_prev);
    VjpOptions vopts;
    vopts.output_hint = &x_hat;
    vopts.want_measurement_cotangents = opts.want_measurement_cotangents;
    auto res = layer_vjp(net.layers[k], x_prev, q, vopts, &report.counters);
    report.layer_grads[k] = std::move(res.grads);
    q = std::move(res.input_grad);
    x_hat = std::move(x_prev);
  }
  report.input_grad = std::move(q);
  check_report_finite(report);
  return report;
}

GradientReport backprop_hybrid(const Network& net, const ForwardRecord& record,
                               const Tensor& loss_grad, const FixedPointConfig& inv,
                               const EngineOptions& opts) {
  const std::size_t n = net.layers.size();
  const auto stored_at = [&record](std::size_t i) -> const Tensor* {
    const auto it = record.stored.find(i);
    return it == record.stored.end() ? nullptr : &it->second;
  };
  const Tensor* x_n = stored_at(n);
  if (x_n == nullptr) {
    raise(ErrorKind::Validation, "hybrid engine needs the record output state");
  }
  // Only layers whose input state will actually be recalculated need an
  // invertibility certificate.
  for (std::size_t k = 0; k < n; ++k) {
    if (stored_at(k) == nullptr) refuse_if_uncertified(net.layers[k], k);
  }
  GradientReport report;
  report.layer_grads.resize(n);
  report.counters.peak_stored_states = record.counters.peak_stored_states;
  Tensor x_hat = *x_n;
  Tensor q = loss_grad;
  for (std::size_t k = n; k-- > 0;) {
    const Tensor* checkpoint = stored_at(k);
    Tensor x_prev;
    if (checkpoint != nullptr) {
      if (opts.measure_checkpoint_residuals) {
        Tensor recalculated = layer_inverse(net.layers[k], x_hat, inv, &report.counters);
        report.diagnostics.checkpoint_residuals.emplace_back(
            k, norm(recalculated - *checkpoint));
      }
      x_prev = *checkpoint;
    } else {
      try {
        x_prev = layer_inverse(net.layers[k], x_hat, inv, &report.counters);
      } catch (const Error& e) {
        raise(e.kind(), "reverse recalculation at layer " + std::to_string(k) + ": " +
                            e.what());
      }
    }
    record_shadow(report.diagnostics, opts, k, x_prev);
    VjpOptions vopts;
    vopts.output_hint = &x_hat;
    vopts.want_measurement_cotangents = opts.want_measurement_cotangents;
    auto res = layer_vjp(net.layers[k], x_prev, q, vopts, &report.counters);
    report.layer_grads[k] = std::move(res.grads);
    q = std::move(res.input_grad);
    x_hat = std::move(x_prev);
  }
  report.input_grad = std::move(q);
  check_report_finite(report);
  return report;
}

}  // namespace pbn

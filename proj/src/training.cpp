#include "pbn/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pbn/apps.hpp"
#include "pbn/errors.hpp"

namespace pbn {

namespace {

/// Returns a copy of the network carrying this measurement list in every
/// gradient layer (all unrolled iterations see the same data).
Network with_measurements(const Network& net, const std::vector<Tensor>& y) {
  Network out = net;
  for (auto& layer : out.layers) {
    if (auto* g = std::get_if<GradientLayer>(&layer.op)) {
      if (g->terms.size() != y.size()) {
        raise(ErrorKind::Shape, "measurement count does not match fidelity terms");
      }
      for (std::size_t i = 0; i < y.size(); ++i) g->terms[i].measurement = y[i];
    }
  }
  return out;
}

const GradientLayer* first_gradient_layer(const Network& net) {
  for (const auto& layer : net.layers) {
    if (const auto* g = std::get_if<GradientLayer>(&layer.op)) return g;
  }
  return nullptr;
}

bool wants_measurement_cotangents(const BuiltApp& app) {
  if (app.kind != ApplicationKind::SrDesign) return false;
  for (const auto& b : app.layout.blocks) {
    if (b.field == ParamField::Design) return true;
  }
  return false;
}

GradientReport run_engine(const BuiltApp& app, const Network& net,
                          const ForwardRecord& record, const Tensor& q_final,
                          const EngineOptions& opts) {
  switch (app.engine) {
    case EngineKind::Standard:
      return backprop_standard(net, record, q_final, opts);
    case EngineKind::MemoryEfficient:
      return backprop_memory_efficient(net, record.output, q_final, app.inversion, opts);
    case EngineKind::Hybrid:
      return backprop_hybrid(net, record, q_final, app.inversion, opts);
  }
  raise(ErrorKind::Validation, "unknown engine");
}

}  // namespace

Tensor simulate_measurements(const LinOp& A, const Tensor& x_gt, double noise_std,
                             std::uint64_t seed) {
  if (noise_std < 0.0) raise(ErrorKind::Validation, "noise_std must be >= 0");
  Tensor y = A.forward(x_gt);
  if (noise_std > 0.0) {
    Rng rng(seed);
    for (auto& v : y.values()) v += noise_std * rng.normal_complex();
  }
  return y;
}

std::pair<double, Tensor> loss_mse(const Tensor& x, const Tensor& x_gt) {
  require_same_shape(x, x_gt, "loss");
  Tensor q = x - x_gt;
  const double n = norm(q);
  return {0.5 * n * n, std::move(q)};
}

double metric_nrmse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "nrmse");
  const double nb = norm(b);
  if (nb == 0.0) raise(ErrorKind::Validation, "nrmse reference has zero norm");
  return norm(a - b) / nb;
}

OptimizerState make_optimizer(const OptimizerConfig& cfg, std::size_t n_params) {
  if (cfg.lr <= 0.0) raise(ErrorKind::Config, "learning rate must be positive");
  OptimizerState st;
  st.cfg = cfg;
  st.m.assign(n_params, 0.0);
  st.v.assign(n_params, 0.0);
  return st;
}

std::vector<double> optimizer_step(OptimizerState& state, const std::vector<double>& params,
                                   const std::vector<double>& grads,
                                   const ParamLayout& layout) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    raise(ErrorKind::Validation, "optimizer buffers disagree in length");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::string name = "param[" + std::to_string(i) + "]";
      for (const auto& b : layout.blocks) {
        if (i >= b.offset && i < b.offset + b.count) {
          name = b.label + "[" + std::to_string(i - b.offset) + "]";
          break;
        }
      }
      raise(ErrorKind::Validation, "non-finite gradient for " + name);
    }
  }
  std::vector<double> out = params;
  state.step += 1;
  if (state.cfg.method == OptimizerConfig::Method::Sgd) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= state.cfg.lr * grads[i];
    return out;
  }
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < out.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    out[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
  }
  return out;
}

Network maintain_certificates(Network net, int sigma_iters, std::uint64_t sigma_seed) {
  // Feasibility projections first, then certificate refresh, then clamps.
  std::map<int, double> curvature_by_group;
  for (auto& layer : net.layers) {
    if (auto* g = std::get_if<GradientLayer>(&layer.op)) {
      bool operators_changed = false;
      for (auto& term : g->terms) {
        if (term.weight_learnable && term.weight < 0.0) {
          term.weight = 0.0;
          operators_changed = true;
        }
        if (term.design_learnable) {
          auto coeffs = term.op.weighted_sum_coeffs();
          bool touched = false;
          for (auto& c : coeffs) {
            if (c < 0.0) {
              c = 0.0;
              touched = true;
            }
          }
          if (touched) {
            term.op = term.op.with_weighted_sum_coeffs(std::move(coeffs));
            operators_changed = true;
          }
        }
      }
      const int group = layer.param_group;
      auto it = curvature_by_group.find(group);
      if (it == curvature_by_group.end()) {
        const double fresh = operators_changed
                                 ? gradient_curvature_estimate(*g, sigma_iters, sigma_seed)
                                 : g->curvature_bound;
        it = curvature_by_group.emplace(group, fresh).first;
      }
      g->curvature_bound = it->second;
      if (g->curvature_bound > 0.0) {
        g->alpha = std::clamp(g->alpha, 0.0, 0.99 / g->curvature_bound);
      } else {
        g->alpha = std::max(g->alpha, 0.0);
      }
    } else if (auto* q = std::get_if<QuadraticProxLayer>(&layer.op)) {
      q->lambda = std::max(q->lambda, 0.0);
    } else if (auto* s = std::get_if<SmoothProxLayer>(&layer.op)) {
      const double hi =
          s->filter_norm_sq > 0.0 ? 0.99 / s->filter_norm_sq : s->lambda;
      s->lambda = std::clamp(s->lambda, 0.0, std::max(0.0, hi));
    } else if (auto* r = std::get_if<InvertibleResidualLayer>(&layer.op)) {
      // Deterministic, so structurally identical layers of one group end up
      // with the same scaling.
      *r = constrain_lipschitz(*r, sigma_seed ^ 0x7e5du, sigma_iters);
    }
  }
  return net;
}

Network network_for_example(const BuiltApp& app, const Network& net,
                            TrainingExample& example) {
  if (app.kind == ApplicationKind::SrDesign) {
    const GradientLayer* g = first_gradient_layer(net);
    if (g == nullptr) raise(ErrorKind::Validation, "design app without gradient layers");
    if (example.noise.size() != g->terms.size()) {
      raise(ErrorKind::Shape, "example noise does not match fidelity terms");
    }
    example.y.resize(g->terms.size());
    for (std::size_t l = 0; l < g->terms.size(); ++l) {
      example.y[l] = g->terms[l].op.forward(example.x_gt);
      example.y[l] += example.noise[l];
    }
  }
  return with_measurements(net, example.y);
}

double evaluate_loss(const BuiltApp& app, const Network& net, TrainingExample example,
                     Counters* counters) {
  const Network net_ex = network_for_example(app, net, example);
  const auto record = forward(net_ex, example.x0, StoragePolicy::store_none());
  if (counters != nullptr) {
    counters->operator_applications += record.counters.operator_applications;
    counters->fixed_point_inner_iterations += record.counters.fixed_point_inner_iterations;
    counters->peak_stored_states =
        std::max(counters->peak_stored_states, record.counters.peak_stored_states);
  }
  return loss_mse(record.output, example.x_gt).first;
}

EvalResult evaluate_gradient(const BuiltApp& app, const Network& net,
                             TrainingExample example, const EngineOptions& opts_in,
                             bool with_shadow) {
  const Network net_ex = network_for_example(app, net, example);
  const auto record = forward(net_ex, example.x0, app.policy);
  auto [loss, q_final] = loss_mse(record.output, example.x_gt);

  EngineOptions opts = opts_in;
  opts.want_measurement_cotangents = wants_measurement_cotangents(app);
  ForwardRecord shadow_record;
  if (with_shadow) {
    shadow_record = forward(net_ex, example.x0, StoragePolicy::store_all());
    opts.shadow_reference = &shadow_record;
    opts.measure_checkpoint_residuals = true;
  }
  const GradientReport report = run_engine(app, net_ex, record, q_final, opts);

  EvalResult res;
  res.loss = loss;
  res.output = record.output;
  res.forward_counters = record.counters;
  res.engine_counters = report.counters;
  res.diagnostics = report.diagnostics;
  res.flat_grads = flatten_grads(net_ex, app.layout, report);

  if (opts.want_measurement_cotangents) {
    // Design gradient, measurement-formation path: y_l depends on the design
    // through y_l = B_l(c) x_gt + n_l, so dL/dc_ls += Re<dL/dy_l, E_s x_gt>.
    for (const auto& b : app.layout.blocks) {
      if (b.field != ParamField::Design) continue;
      Tensor cot;
      bool have = false;
      for (std::size_t k = net_ex.layers.size(); k-- > 0;) {
        if (net_ex.layers[k].param_group != b.group) continue;
        const auto& cots = report.layer_grads[k].measurement_cotangents;
        if (cots.size() <= b.term) {
          raise(ErrorKind::Validation, "missing measurement cotangent for " + b.label);
        }
        if (!have) {
          cot = cots[b.term];
          have = true;
        } else {
          cot += cots[b.term];
        }
      }
      if (!have) continue;
      const auto& g = std::get<GradientLayer>(net_ex.layers[b.layer].op);
      for (std::size_t s = 0; s < b.count; ++s) {
        const LinOp comp = g.terms[b.term].op.weighted_sum_component(s);
        res.flat_grads[b.offset + s] += real_inner(cot, comp.forward(example.x_gt));
      }
    }
  }
  return res;
}

BuiltApp build_app(const ExperimentConfig& cfg) {
  switch (cfg.application) {
    case ApplicationKind::SrDesign:
      return build_sr_design_app(cfg);
    case ApplicationKind::MriPrior:
      return build_mri_prior_app(cfg);
  }
  raise(ErrorKind::Config, "unknown application");
}

TrainLog train(const ExperimentConfig& cfg) {
  BuiltApp app = build_app(cfg);
  Network net = app.net;
  const ParamLayout& layout = app.layout;
  OptimizerState opt = make_optimizer(cfg.optimizer, layout.total);

  TrainLog log;
  log.cfg = cfg;
  log.layout = layout;

  auto mean_loss = [&](const std::vector<TrainingExample>& set, Counters* counters) {
    if (set.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& ex : set) acc += evaluate_loss(app, net, ex, counters);
    return acc / static_cast<double>(set.size());
  };

  {
    EpochRow row;
    row.epoch = 0;
    Counters c;
    row.train_loss = mean_loss(app.train_set, &c);
    row.test_loss = mean_loss(app.test_set, &c);
    row.peak_stored_states = c.peak_stored_states;
    row.operator_applications = c.operator_applications;
    row.grad_norm = 0.0;
    log.rows.push_back(row);
  }

  const std::size_t n_train = app.train_set.size();
  const std::size_t batch =
      cfg.batch_size == 0 ? std::max<std::size_t>(1, n_train) : cfg.batch_size;
  bool shadow_taken = false;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    Counters epoch_counters;
    double last_grad_norm = 0.0;
    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t stop = std::min(n_train, start + batch);
      std::vector<double> grad_sum(layout.total, 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        EngineOptions opts;
        const bool want_shadow = cfg.shadow_diagnostics && !shadow_taken &&
                                 app.engine != EngineKind::Standard;
        EvalResult res = evaluate_gradient(app, net, app.train_set[i], opts, want_shadow);
        if (want_shadow) {
          log.shadow = res.diagnostics;
          shadow_taken = true;
        }
        epoch_loss += res.loss;
        epoch_count += 1;
        for (std::size_t j = 0; j < grad_sum.size(); ++j) grad_sum[j] += res.flat_grads[j];
        epoch_counters.operator_applications +=
            res.forward_counters.operator_applications +
            res.engine_counters.operator_applications;
        epoch_counters.fixed_point_inner_iterations +=
            res.forward_counters.fixed_point_inner_iterations +
            res.engine_counters.fixed_point_inner_iterations;
        epoch_counters.peak_stored_states =
            std::max({epoch_counters.peak_stored_states,
                      res.forward_counters.peak_stored_states,
                      res.engine_counters.peak_stored_states});
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& gv : grad_sum) gv *= inv;
      last_grad_norm = l2_norm(grad_sum);
      const auto params = collect_params(net, layout);
      const auto updated = optimizer_step(opt, params, grad_sum, layout);
      net = with_params(net, layout, updated, /*refresh_certificates=*/true);
      net = maintain_certificates(net);
    }
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = epoch_count > 0 ? epoch_loss / static_cast<double>(epoch_count) : 0.0;
    row.test_loss = mean_loss(app.test_set, nullptr);
    row.peak_stored_states = epoch_counters.peak_stored_states;
    row.operator_applications = epoch_counters.operator_applications;
    row.grad_norm = last_grad_norm;
    log.rows.push_back(row);
  }

  log.certificate = certify_invertible(net);
  log.final_params = collect_params(net, layout);
  log.final_net = net;
  log.final_train_loss = log.rows.back().train_loss;
  log.final_test_loss = log.rows.back().test_loss;
  if (log.rows.size() == 1) {
    log.final_train_loss = log.rows.front().train_loss;
    log.final_test_loss = log.rows.front().test_loss;
  }
  return log;
}

GradcheckReport run_gradcheck(const ExperimentConfig& cfg) {
  if (cfg.image_size > 16 || cfg.unrolls > 10) {
    raise(ErrorKind::Config,
          "gradcheck needs image_size <= 16 and unrolls <= 10 for finite differences");
  }
  BuiltApp app = build_app(cfg);
  const Network& net = app.net;
  const ParamLayout& layout = app.layout;
  if (layout.total == 0) raise(ErrorKind::Config, "no learnable parameters selected");
  if (app.train_set.empty()) raise(ErrorKind::Config, "gradcheck needs one example");
  const TrainingExample& ex = app.train_set.front();

  auto engine_grads = [&](EngineKind kind, StoragePolicy policy) {
    BuiltApp variant = app;
    variant.engine = kind;
    variant.policy = policy;
    return evaluate_gradient(variant, net, ex).flat_grads;
  };
  const auto g_std = engine_grads(EngineKind::Standard, StoragePolicy::store_all());
  const auto g_mem = engine_grads(EngineKind::MemoryEfficient, StoragePolicy::store_none());
  const auto g_hyb = engine_grads(
      EngineKind::Hybrid,
      StoragePolicy::checkpoint_every(std::max<std::size_t>(1, cfg.checkpoint_every * 2)));

  const auto base = collect_params(net, layout);
  const double h = 1e-6;
  std::vector<double> g_fd(layout.total, 0.0);
  for (std::size_t i = 0; i < layout.total; ++i) {
    auto p = base;
    p[i] = base[i] + h;
    const double lp =
        evaluate_loss(app, with_params(net, layout, p, /*refresh=*/false), ex);
    p[i] = base[i] - h;
    const double lm =
        evaluate_loss(app, with_params(net, layout, p, /*refresh=*/false), ex);
    g_fd[i] = (lp - lm) / (2.0 * h);
  }

  double scale = 0.0;
  for (double g : g_std) scale = std::max(scale, std::abs(g));
  auto rel = [scale](double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-3 * scale, 1e-12});
    return std::abs(a - b) / denom;
  };

  GradcheckReport report;
  for (const auto& b : layout.blocks) {
    GradcheckRow row;
    row.param = b.label;
    for (std::size_t j = 0; j < b.count; ++j) {
      const std::size_t i = b.offset + j;
      row.fd_vs_standard = std::max(row.fd_vs_standard, rel(g_fd[i], g_std[i]));
      row.mem_vs_standard = std::max(row.mem_vs_standard, rel(g_mem[i], g_std[i]));
      row.hybrid_vs_standard = std::max(row.hybrid_vs_standard, rel(g_hyb[i], g_std[i]));
    }
    report.max_fd = std::max(report.max_fd, row.fd_vs_standard);
    report.max_mem = std::max(report.max_mem, row.mem_vs_standard);
    report.max_hybrid = std::max(report.max_hybrid, row.hybrid_vs_standard);
    report.rows.push_back(std::move(row));
  }
  report.pass = report.max_fd <= report.tol_fd && report.max_mem <= report.tol_mem &&
                report.max_hybrid <= report.tol_hybrid;
  return report;
}

}  // namespace pbn

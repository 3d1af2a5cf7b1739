#include "pbn/bench.hpp"

#include <sstream>

#include "pbn/errors.hpp"

namespace pbn {

namespace {

Network make_bench_chain(std::size_t n_layers, std::uint64_t seed) {
  // Alternating data-consistency and quadratic-prox steps on a 16x16 image,
  // with the gradient step size set for a 0.5 contraction factor.
  const Shape img{16, 16};
  Rng rng(seed);
  Tensor w(img);
  for (auto& v : w.values()) v = cdouble(rng.uniform(0.5, 1.0), 0.0);
  FidelityTerm term;
  term.weight = 1.0;
  term.op = LinOp::diagonal(std::move(w));
  term.measurement = random_tensor(img, rng);
  GradientLayer grad = make_gradient_layer(0.0, /*alpha_learnable=*/true, {std::move(term)});
  grad.alpha = 0.5 / grad.curvature_bound;
  QuadraticProxLayer prox{0.5, false};
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < n_layers; ++k) {
    if (k % 2 == 0) {
      layers.push_back(Layer{grad, -1});
    } else {
      layers.push_back(Layer{prox, -1});
    }
  }
  return make_network(std::move(layers));
}

}  // namespace

std::vector<BenchRow> run_bench(const ExperimentConfig& cfg,
                                const std::vector<std::size_t>& depths) {
  std::vector<BenchRow> rows;
  const FixedPointConfig inv{cfg.fixed_point_iters, 0.0, false};
  for (std::size_t n : depths) {
    const Network net = make_bench_chain(n, cfg.seed);
    Rng rng(cfg.seed ^ 0xbecbecULL);
    const Tensor x0 = random_tensor({16, 16}, rng);
    for (EngineKind engine :
         {EngineKind::Standard, EngineKind::MemoryEfficient, EngineKind::Hybrid}) {
      StoragePolicy policy = StoragePolicy::store_all();
      if (engine == EngineKind::MemoryEfficient) policy = StoragePolicy::store_none();
      if (engine == EngineKind::Hybrid) {
        policy = StoragePolicy::checkpoint_every(cfg.checkpoint_every);
      }
      const ForwardRecord record = forward(net, x0, policy);
      const Tensor q_final = record.output;  // gradient of 0.5||x||^2 at the output
      GradientReport report;
      switch (engine) {
        case EngineKind::Standard:
          report = backprop_standard(net, record, q_final);
          break;
        case EngineKind::MemoryEfficient:
          report = backprop_memory_efficient(net, record.output, q_final, inv);
          break;
        case EngineKind::Hybrid:
          report = backprop_hybrid(net, record, q_final, inv);
          break;
      }
      BenchRow row;
      row.engine = engine;
      row.n_layers = n;
      row.checkpoint_every = engine == EngineKind::Hybrid ? cfg.checkpoint_every : 0;
      row.peak_stored_states = report.counters.peak_stored_states;
      row.forward_applications = record.counters.operator_applications;
      row.engine_applications = report.counters.operator_applications;
      row.fixed_point_iterations = report.counters.fixed_point_inner_iterations;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "engine,n_layers,checkpoint_every,peak_stored_states,forward_applications,"
         "engine_applications,fixed_point_iterations\n";
  for (const auto& r : rows) {
    out << engine_name(r.engine) << ',' << r.n_layers << ',' << r.checkpoint_every << ','
        << r.peak_stored_states << ',' << r.forward_applications << ','
        << r.engine_applications << ',' << r.fixed_point_iterations << '\n';
  }
  return out.str();
}

}  // namespace pbn

#pragma once

#include "pbn/config.hpp"
#include "pbn/params.hpp"

namespace pbn {

/// One supervised example. For the design application the measurements are
/// re-formed from the ground truth and the current design before every
/// gradient evaluation, reusing the frozen noise draws.
struct TrainingExample {
  Tensor x_gt;
  std::vector<Tensor> noise;  // per-term noise, frozen at dataset creation
  std::vector<Tensor> y;      // current measurements, one per fidelity term
  Tensor x0;
};

struct BuiltApp {
  ApplicationKind kind = ApplicationKind::SrDesign;
  Network net;
  std::vector<TrainingExample> train_set;
  std::vector<TrainingExample> test_set;
  ParamLayout layout;
  StoragePolicy policy;
  FixedPointConfig inversion;
  EngineKind engine = EngineKind::MemoryEfficient;
  std::uint64_t seed = 0;
};

/// y = A x + n with complex Gaussian noise of the given per-component
/// standard deviation.
Tensor simulate_measurements(const LinOp& A, const Tensor& x_gt, double noise_std,
                             std::uint64_t seed);

/// L = 0.5 ||x - x_gt||^2 and its gradient with respect to x.
std::pair<double, Tensor> loss_mse(const Tensor& x, const Tensor& x_gt);

/// ||a - b|| / ||b||
double metric_nrmse(const Tensor& a, const Tensor& b);

struct OptimizerState {
  OptimizerConfig cfg;
  std::vector<double> m, v;
  std::size_t step = 0;
};

OptimizerState make_optimizer(const OptimizerConfig& cfg, std::size_t n_params);

/// One SGD / Adam update. Rejects non-finite gradients naming the parameter.
std::vector<double> optimizer_step(OptimizerState& state, const std::vector<double>& params,
                                   const std::vector<double>& grads,
                                   const ParamLayout& layout);

/// Post-update certificate maintenance: designs and penalty strengths are
/// projected to their feasible sets, gradient steps are clamped to
/// 0.99 / sigma_max, and residual banks are re-constrained to their budget.
Network maintain_certificates(Network net, int sigma_iters = 96,
                              std::uint64_t sigma_seed = 0x51u);

/// Refreshes example measurements against the network's current parameters
/// (a no-op for applications with fixed forward models) and returns a network
/// carrying this example's measurements.
Network network_for_example(const BuiltApp& app, const Network& net,
                            TrainingExample& example);

struct EvalResult {
  double loss = 0.0;
  Tensor output;
  std::vector<double> flat_grads;
  Counters forward_counters;
  Counters engine_counters;
  EngineDiagnostics diagnostics;
};

double evaluate_loss(const BuiltApp& app, const Network& net, TrainingExample example,
                     Counters* counters = nullptr);

/// Full pipeline gradient for one example with the app's engine: measurement
/// formation, unrolled forward, loss, reverse engine, and (for the design
/// application) the measurement-formation path of the design gradient.
/// `with_shadow` additionally runs a store-all reference pass and fills the
/// reverse-state residual diagnostics.
EvalResult evaluate_gradient(const BuiltApp& app, const Network& net,
                             TrainingExample example, const EngineOptions& opts = {},
                             bool with_shadow = false);

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  std::size_t peak_stored_states = 0;
  std::size_t operator_applications = 0;
  double grad_norm = 0.0;
};

struct TrainLog {
  ExperimentConfig cfg;
  std::vector<EpochRow> rows;
  CertificateReport certificate;
  ParamLayout layout;
  std::vector<double> final_params;
  Network final_net;
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  EngineDiagnostics shadow;  // first gradient evaluation, when enabled
};

BuiltApp build_app(const ExperimentConfig& cfg);
TrainLog train(const ExperimentConfig& cfg);

struct GradcheckRow {
  std::string param;
  double fd_vs_standard = 0.0;
  double mem_vs_standard = 0.0;
  double hybrid_vs_standard = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double max_fd = 0.0, max_mem = 0.0, max_hybrid = 0.0;
  double tol_fd = 1e-5, tol_mem = 1e-6, tol_hybrid = 1e-6;
  bool pass = false;
};

/// Compares, per parameter, standard backprop against central finite
/// differences of the whole pipeline, and the reverse-recalculation engines
/// against standard backprop.
GradcheckReport run_gradcheck(const ExperimentConfig& cfg);

}  // namespace pbn

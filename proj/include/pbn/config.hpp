#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pbn {

enum class ApplicationKind { SrDesign, MriPrior };
enum class EngineKind { Standard, MemoryEfficient, Hybrid };

const char* application_name(ApplicationKind k);
const char* engine_name(EngineKind k);

struct OptimizerConfig {
  enum class Method { Sgd, Adam };
  Method method = Method::Adam;
  double lr = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Every knob of one experiment. `seed` is mandatory in config files; all
/// randomness (phantoms, noise, initial parameters) derives from it.
struct ExperimentConfig {
  int schema_version = 1;
  ApplicationKind application = ApplicationKind::SrDesign;
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  std::size_t unrolls = 10;            // N: gradient/prox iteration pairs
  std::size_t fixed_point_iters = 30;  // T: inversion and inner-solve budget
  EngineKind engine = EngineKind::MemoryEfficient;
  std::size_t checkpoint_every = 5;    // hybrid: checkpoint spacing in unrolls
  std::size_t epochs = 20;
  std::size_t batch_size = 0;          // 0 = full batch
  double noise_std = 0.01;
  std::size_t train_examples = 6;
  std::size_t test_examples = 3;
  OptimizerConfig optimizer;
  double alpha_scale = 0.5;            // gradient step = alpha_scale / sigma_max

  struct Learn {
    bool design = true;        // multiplexing coefficients (sr_design)
    bool alpha = false;
    bool prox_strength = false;
    bool prior = true;         // residual kernels (mri_prior)
  } learn;

  struct Sr {
    std::size_t sources = 8;   // spectral bands available for multiplexing
    std::size_t channels = 3;  // acquired multiplexed measurements
    double prox_lambda_scale = 0.5;  // lambda = scale / sigma_max(C^H C)
  } sr;

  struct Mri {
    std::size_t coils = 4;
    double acceleration = 2.5;
    double center_fraction = 0.125;
    std::size_t hidden_channels = 4;
    std::size_t kernel_size = 3;
    double lipschitz_budget = 0.9;
    bool share_prior = true;  // one parameter set across unrolls, or one per layer
  } mri;

  bool shadow_diagnostics = false;
};

/// Parses and validates a config file (JSON). Unknown keys are rejected at
/// every nesting level; schema_version and seed are required.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Applies dotted-path overrides ("optimizer.lr=0.05") on top of the file
/// before validation.
ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& overrides);

/// Canonical serialization with stable key order, used for the config echo.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace pbn

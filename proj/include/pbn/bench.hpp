#pragma once

#include "pbn/training.hpp"

namespace pbn {

struct BenchRow {
  EngineKind engine = EngineKind::Standard;
  std::size_t n_layers = 0;
  std::size_t checkpoint_every = 0;  // meaningful for hybrid rows
  std::size_t peak_stored_states = 0;
  std::size_t forward_applications = 0;
  std::size_t engine_applications = 0;
  std::size_t fixed_point_iterations = 0;
};

/// Builds an instrumented chain of gradient / quadratic-prox layers and runs
/// one gradient computation per engine for each depth. Depths are chain-layer
/// counts; the checkpoint spacing comes from cfg.checkpoint_every, also in
/// chain-layer units here.
std::vector<BenchRow> run_bench(const ExperimentConfig& cfg,
                                const std::vector<std::size_t>& depths = {5, 10, 20, 40});

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace pbn

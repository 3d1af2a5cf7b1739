#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pbn/apps.hpp"
#include "pbn/bench.hpp"
#include "pbn/errors.hpp"
#include "pbn/reporting.hpp"

namespace {

int exit_code_for(pbn::ErrorKind kind) {
  switch (kind) {
    case pbn::ErrorKind::Config: return 2;
    case pbn::ErrorKind::Certificate: return 3;
    case pbn::ErrorKind::Io: return 4;
    default: return 1;
  }
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool shadow = false;
};

pbn::ExperimentConfig load(const CommonArgs& args) {
  auto overrides = args.overrides;
  if (args.seed) overrides.push_back("seed=" + std::to_string(*args.seed));
  if (args.shadow) overrides.push_back("shadow_diagnostics=true");
  return pbn::load_config_file(args.config_path, overrides);
}

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

int cmd_train(const CommonArgs& args) {
  const auto cfg = load(args);
  const auto log = pbn::train(cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) pbn::raise(pbn::ErrorKind::Io, "cannot create output directory " + args.out_dir);
  pbn::write_text_file(args.out_dir + "/config.json", pbn::config_to_json(cfg) + "\n");
  pbn::write_text_file(args.out_dir + "/log.csv", pbn::log_csv(log));
  pbn::write_text_file(args.out_dir + "/summary.json",
                       pbn::summary_json(log, timestamp_now()) + "\n");
  if (cfg.shadow_diagnostics) {
    pbn::write_text_file(args.out_dir + "/residual_trace.csv",
                         pbn::shadow_trace_csv(log.shadow));
  }
  std::cout << "final_test_loss=" << pbn::format_double(log.final_test_loss) << "\n";
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  const auto cfg = load(args);
  const auto report = pbn::run_gradcheck(cfg);
  std::printf("%-28s %14s %14s %14s\n", "parameter", "fd_vs_std", "mem_vs_std",
              "hybrid_vs_std");
  for (const auto& row : report.rows) {
    std::printf("%-28s %14.3e %14.3e %14.3e\n", row.param.c_str(), row.fd_vs_standard,
                row.mem_vs_standard, row.hybrid_vs_standard);
  }
  std::printf("max: fd=%.3e (tol %.0e)  mem=%.3e (tol %.0e)  hybrid=%.3e (tol %.0e)\n",
              report.max_fd, report.tol_fd, report.max_mem, report.tol_mem,
              report.max_hybrid, report.tol_hybrid);
  if (!report.pass) {
    for (const auto& row : report.rows) {
      if (row.fd_vs_standard > report.tol_fd || row.mem_vs_standard > report.tol_mem ||
          row.hybrid_vs_standard > report.tol_hybrid) {
        std::cerr << "error: gradcheck: mismatch at " << row.param << "\n";
        return 1;
      }
    }
    std::cerr << "error: gradcheck: threshold exceeded\n";
    return 1;
  }
  std::cout << "gradcheck passed\n";
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const auto cfg = load(args);
  const auto rows = pbn::run_bench(cfg);
  const std::string csv = pbn::bench_csv(rows);
  std::cout << csv;
  if (!args.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(args.out_dir, ec);
    if (!ec) pbn::write_text_file(args.out_dir + "/bench.csv", csv);
  }
  return 0;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--override", args.overrides,
                  "config override KEY=VALUE (repeatable, dotted keys allowed)");
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_flag("--shadow-diagnostics", args.shadow,
                "record reverse-state residual traces");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unrolled proximal-gradient networks with invertible-layer backpropagation"};
  app.require_subcommand(1);
  CommonArgs train_args, grad_args, bench_args;
  CLI::App* train_cmd = app.add_subcommand("train", "run a training experiment");
  add_common(train_cmd, train_args);
  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "validate gradients against finite differences");
  add_common(grad_cmd, grad_args);
  CLI::App* bench_cmd =
      app.add_subcommand("bench", "report stored-state and work counters per engine");
  add_common(bench_cmd, bench_args);

  CLI11_PARSE(app, argc, argv);
  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_args);
    if (bench_cmd->parsed()) return cmd_bench(bench_args);
  } catch (const pbn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

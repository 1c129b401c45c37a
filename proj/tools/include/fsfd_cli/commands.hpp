#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsfd_cli/config.hpp"

namespace fsfd::cli {

struct CommandOptions {
  std::string out_dir = ".";
  bool quiet = false;
  std::optional<std::uint64_t> seed;  // overrides the config seed
};

// Effective Monte-Carlo parallelism: FSFD_THREADS capped by the hardware,
// defaulting to a small fixed budget. Results are aggregated by index, so the
// thread count never changes any output byte.
int thread_budget();

// Each command writes its files under opts.out_dir and returns a process exit
// code; recoverable problems surface as fsfd exceptions instead.
int cmd_simulate(const ExperimentConfig& cfg, const CommandOptions& opts);
int cmd_train(const ExperimentConfig& cfg, const std::string& signals_path,
              const CommandOptions& opts);
int cmd_detect(const std::string& detector_path, const std::string& signals_path,
               const CommandOptions& opts);
int cmd_verify(const ExperimentConfig& cfg, const CommandOptions& opts);
int cmd_bench(const ExperimentConfig& cfg, const CommandOptions& opts);

// Exit-code policy: 0 success, 2 input/validation problems, 3 numerical
// failures, 4 failed verification certificates.
int exit_code_for(const std::exception& error);

// Full argv-level entry point (parsing, dispatch, error mapping).
int run_cli(int argc, const char* const* argv);

}  // namespace fsfd::cli

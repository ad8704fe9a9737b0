#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "usersim/config.hpp"

namespace usersim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInvalidConfig = 2;
inline constexpr int kExitMissingFixture = 3;

// Name of the environment variable holding the default output root.
inline constexpr const char* kOutEnv = "USERSIM_OUT";

struct CliOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<int> iterations;
  std::vector<std::string> overrides;  // dotted key=value

  // inputs of the single-stage commands; defaults live under the output dir
  std::optional<std::filesystem::path> policy;
  std::optional<std::filesystem::path> disc;
  std::optional<std::filesystem::path> pairs;
  std::optional<std::filesystem::path> real;  // eval: real corpus instead of a fresh one
  std::vector<std::string> sims;              // eval: name=path (.ckpt policy or .jsonl corpus)
};

// Defaults, then --config, then dotted overrides, then the named flags. A
// relative out_dir is placed under $USERSIM_OUT when that is set, unless
// --out was given.
ExperimentConfig resolve_config(const CliOptions& opt);

// Each command writes under cfg.out_dir and returns its one-line summary.
std::string cmd_init_fixtures(const ExperimentConfig& cfg);
std::string cmd_generate(const ExperimentConfig& cfg);
std::string cmd_sft(const ExperimentConfig& cfg);
std::string cmd_disc(const ExperimentConfig& cfg, const CliOptions& opt);
std::string cmd_mine(const ExperimentConfig& cfg, const CliOptions& opt);
std::string cmd_dpo(const ExperimentConfig& cfg, const CliOptions& opt);
std::string cmd_loop(const ExperimentConfig& cfg, const CliOptions& opt);
std::string cmd_eval(const ExperimentConfig& cfg, const CliOptions& opt);
std::string cmd_report(const ExperimentConfig& cfg);

// Runs `command` and maps failures to exit codes: 2 for an invalid config
// field, 3 for a missing fixture or input artifact, 1 otherwise.
int run_command(const std::string& command, const CliOptions& opt, std::ostream& out,
                std::ostream& err);

// Full argument parsing; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace usersim

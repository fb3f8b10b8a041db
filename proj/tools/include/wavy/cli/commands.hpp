#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "wavy/cli/config.hpp"

namespace wavy::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // runtime error or failed check
inline constexpr int kExitConfig = 2;   // configuration rejected

std::vector<std::string> command_names();

/// Runs one command and writes its artifacts under cfg.output_dir. Returns
/// kExitOk or kExitFailure; throws ConfigError when a required section is
/// missing and wavy::Error on runtime failures.
int run_command(std::string_view name, const ExperimentConfig& cfg, std::ostream& log);

/// Argument parsing plus error-to-exit-code mapping around run_command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wavy::cli

#pragma once

// Pipeline commands behind the CLI. Each returns an exit code from the
// stable contract: 0 success, 1 verification failure, 2 config error,
// 3 IO error.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "muvfs/config.hpp"
#include "muvfs/metalearn.hpp"

namespace muvfs::commands {

enum ExitCode : int { kOk = 0, kVerificationFailure = 1, kConfigError = 2, kIoError = 3 };

struct CommandResult {
  int exit_code = kOk;
  std::string message;                // human-readable summary or error
  std::vector<std::string> warnings;  // e.g. ignored parameters
  nlohmann::json summary;             // machine-readable summary
};

CommandResult cmd_generate(const config::RunConfig& config);
CommandResult cmd_pretrain(const config::RunConfig& config);
CommandResult cmd_metatrain(const config::RunConfig& config);
CommandResult cmd_evaluate(const config::RunConfig& config);
CommandResult cmd_gradcheck(const config::RunConfig& config);

std::vector<std::string> command_names();

// Dispatches by name, maps exceptions to exit codes and writes the message
// and warnings to the given streams.
int run_command(const std::string& name, const config::RunConfig& config, std::ostream& out, std::ostream& err);

// Warnings for settings that the chosen evaluation learner never reads.
std::vector<std::string> ignored_parameter_warnings(const config::RunConfig& config);

// Head checkpoint helpers ("head.K", ..., plus mode in the meta map).
void save_head(const std::filesystem::path& dir, const metalearn::Head& head, std::map<std::string, std::string> meta);
metalearn::Head load_head(const std::filesystem::path& dir, std::map<std::string, std::string>* meta = nullptr);

}  // namespace muvfs::commands

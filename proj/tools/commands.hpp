#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace mscore::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct CommandContext {
  std::string out_dir;
  int workers = 1;
  std::ostream* log = nullptr;  // progress and timings; never written into output files
};

int cmd_score(const RunConfig& config, const CommandContext& ctx);
int cmd_validate(const RunConfig& config, const CommandContext& ctx);
int cmd_reverse(const RunConfig& config, const CommandContext& ctx);
int cmd_simulate(const RunConfig& config, const CommandContext& ctx);
int cmd_duality(const RunConfig& config, const CommandContext& ctx);

const std::vector<std::string>& command_names();

/// Loads the config, dispatches, and maps exceptions onto the exit-code contract.
int run_command(const std::string& name, const std::string& config_path, const std::string& out_override,
                int workers, std::ostream& log, std::ostream& err);

}  // namespace mscore::app

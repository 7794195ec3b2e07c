#pragma once

#include <string>

namespace gpvae::cli {

/// Executes one subcommand (train|eval|gap|uncertainty|bench) against a JSON
/// config file. Artifacts land in the config's out_dir together with the
/// resolved config. Returns a process exit status.
int run_command(const std::string& command, const std::string& config_path);

}  // namespace gpvae::cli

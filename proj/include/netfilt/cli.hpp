#pragma once

#include <netfilt/types.hpp>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace CLI {
class App;
}

namespace netfilt {

/// Values bound to the command-line flags.
struct CliOptions {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<Index> realisations;
  bool quiet = false;
  unsigned threads = 0;

  std::string scenario_path;
  std::vector<std::string> overrides;

  std::string topology_path;
  std::string weights = "metropolis";
  std::string matrix_path;

  std::string analyze_dir;
  Index burn_in = 0;

  std::string sweep_param;
  std::vector<std::string> sweep_values;
};

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitInvalid = 2, kExitDiverged = 3 };

/// The `netfilt` command tree; flags write into `options`.
std::unique_ptr<CLI::App> make_app(CliOptions& options);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace netfilt

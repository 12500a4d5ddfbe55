#pragma once

#include <atomic>
#include <ostream>
#include <string>
#include <vector>

namespace tabval {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitBackend = 2,
  kExitUsage = 64,
  kExitInterrupted = 130,
};

/// args excludes the program name. `cancel`, when given, is polled between
/// candidates; once set the run finalizes its report and exits 130.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                const std::atomic<bool>* cancel = nullptr);

}  // namespace tabval

#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace drsl {

/// Invalid specification or configuration (bad noise rate, malformed
/// config file, dimension mismatch between components). CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API misuse: a precondition the caller is responsible for was violated
/// (e.g. querying the OOD score before prototype initialization).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Non-finite loss encountered during training. The trainer aborts and
/// dumps diagnostics rather than silently skipping the batch. CLI exit
/// code 3.
struct TrainingAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A metric was requested on inputs for which it is undefined (empty
/// score list, no open-set test samples).
struct UndefinedMetric : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void warn(const std::string& msg) {
  std::cerr << "[drsl] warning: " << msg << "\n";
}

inline void info(const std::string& msg) {
  std::cerr << "[drsl] " << msg << "\n";
}

}  // namespace drsl

#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace waferscope {

// Invalid configuration values or schema violations (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-range input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (CLI exit code 4).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WarningSink = std::function<void(const std::string&)>;

// Replaces the process-wide warning sink and returns the previous one.
// The default sink writes "warning: <msg>" to stderr.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace waferscope

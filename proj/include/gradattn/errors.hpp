#pragma once

#include <stdexcept>
#include <string>

namespace gradattn {

// Config/usage problems are plain std::invalid_argument. These two carry the
// remaining CLI exit-code categories.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

}  // namespace gradattn

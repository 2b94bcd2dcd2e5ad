#pragma once

#include <stdexcept>

namespace pdectrl {

// CLI exit codes: 0 ok, 2 config, 3 numerical, 4 io.
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericalError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace pdectrl

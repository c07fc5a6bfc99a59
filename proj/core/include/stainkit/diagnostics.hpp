#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stainkit {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a stain estimator finds too few tissue pixels to work with.
class InsufficientTissueError : public Error {
 public:
  using Error::Error;
};

/// Per-thread counters for conditions that are recovered from rather than thrown.
struct Diagnostics {
  std::uint64_t warnings = 0;
  std::uint64_t cosine_zero_guard = 0;
  std::uint64_t uqi_degenerate_windows = 0;
  std::uint64_t msssim_scale_reductions = 0;
};

Diagnostics& diagnostics();
void reset_diagnostics();

/// Emits a warning on stderr (unless silenced) and bumps the warning counter.
void warn(std::string_view message);

/// Silences stderr output of warn() for the calling thread; counters still tick.
void set_warnings_quiet(bool quiet);

}  // namespace stainkit

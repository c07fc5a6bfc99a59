#include "stainkit/diagnostics.hpp"

#include <iostream>

namespace stainkit {
namespace {
thread_local Diagnostics tls_diagnostics;
thread_local bool tls_quiet = false;
}  // namespace

Diagnostics& diagnostics() { return tls_diagnostics; }

void reset_diagnostics() { tls_diagnostics = Diagnostics{}; }

void warn(std::string_view message) {
  ++tls_diagnostics.warnings;
  if (!tls_quiet) {
    std::clog << "[stainkit] warning: " << message << '\n';
  }
}

void set_warnings_quiet(bool quiet) { tls_quiet = quiet; }

}  // namespace stainkit

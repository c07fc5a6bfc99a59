#pragma once

#include <filesystem>
#include <string>

#include "run_config.hpp"

namespace stainkit::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitPartial = 2,  // finished, but some inputs were skipped
};

int cmd_select_template(const RunConfig& config);
int cmd_tile(const RunConfig& config);
int cmd_normalize(const RunConfig& config);
int cmd_train(const RunConfig& config);
/// Compares config.output_dir against config.reference_dir and writes `report`.
int cmd_evaluate(const RunConfig& config, const std::filesystem::path& report);

std::string tool_version();

}  // namespace stainkit::cli

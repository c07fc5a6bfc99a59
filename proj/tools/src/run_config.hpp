#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "stainkit/pidr.hpp"
#include "stainkit/tiling.hpp"

namespace stainkit::cli {

struct TrainSettings {
  std::string domain_a;
  std::string domain_b;
  std::size_t steps = 500;
  float learning_rate = 1.5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float weight_decay = 0.01f;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

struct RunConfig {
  std::string input_dir;
  std::string template_path = "auto";
  std::string output_dir;
  std::string checkpoint;
  std::string reference_dir;
  std::string method = "reinhard";
  std::size_t histogram_bins = 256;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  TileSpec tile{};
  ModelConfig model{};
  TrainSettings train{};

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.input_dir == b.input_dir && a.template_path == b.template_path && a.output_dir == b.output_dir &&
           a.checkpoint == b.checkpoint && a.reference_dir == b.reference_dir && a.method == b.method &&
           a.histogram_bins == b.histogram_bins && a.seed == b.seed && a.threads == b.threads &&
           a.tile.tile_size == b.tile.tile_size && a.tile.edge_policy == b.tile.edge_policy && a.model == b.model &&
           a.train == b.train;
  }
};

/// Parses a JSON config. Absent keys keep defaults; unknown keys throw.
RunConfig parse_run_config(std::string_view json_text);
std::string serialize_run_config(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

/// STAINKIT_SEED, when set, replaces the configured seed. Throws on a malformed value.
void apply_seed_environment(RunConfig& config);

}  // namespace stainkit::cli

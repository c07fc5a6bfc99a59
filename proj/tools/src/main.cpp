// stainkit command-line entry point.
//
// Every subcommand reads an optional JSON config (--config) and then applies
// STAINKIT_SEED and explicit flags on top, in that order.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "run_config.hpp"
#include "stainkit/diagnostics.hpp"

namespace {

using stainkit::cli::RunConfig;

struct Overrides {
  std::string config_path;
  std::optional<std::string> input_dir, template_path, output_dir, checkpoint, reference_dir, method, edge_policy;
  std::optional<std::string> domain_a, domain_b;
  std::optional<std::size_t> bins, threads, tile_size, steps, image_size;
  std::optional<std::uint64_t> seed;
  std::optional<float> learning_rate;
  std::string report;
  bool quiet = false;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : stainkit::cli::load_run_config(o.config_path);
  stainkit::cli::apply_seed_environment(c);
  auto set = [](auto& field, const auto& value) {
    if (value) field = *value;
  };
  set(c.input_dir, o.input_dir);
  set(c.template_path, o.template_path);
  set(c.output_dir, o.output_dir);
  set(c.checkpoint, o.checkpoint);
  set(c.reference_dir, o.reference_dir);
  set(c.method, o.method);
  set(c.histogram_bins, o.bins);
  set(c.threads, o.threads);
  set(c.seed, o.seed);
  set(c.tile.tile_size, o.tile_size);
  set(c.train.domain_a, o.domain_a);
  set(c.train.domain_b, o.domain_b);
  set(c.train.steps, o.steps);
  set(c.train.learning_rate, o.learning_rate);
  set(c.model.image_size, o.image_size);
  if (o.edge_policy) {
    const auto policy = stainkit::parse_edge_policy(*o.edge_policy);
    if (!policy) throw stainkit::Error("--edge-policy must be retain or discard");
    c.tile.edge_policy = *policy;
  }
  if (c.threads == 0) throw stainkit::Error("--threads must be at least 1");
  c.model.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "Seed (overrides config and STAINKIT_SEED)");
  cmd->add_option("--threads", o.threads, "Worker threads (1 = fully sequential)");
  cmd->add_flag("--quiet", o.quiet, "Suppress library warnings on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stainkit: stain normalization for histopathology tiles"};
  app.set_version_flag("--version", stainkit::cli::tool_version());
  app.require_subcommand(1);
  Overrides o;

  auto* select = app.add_subcommand("select-template", "Pick the tile whose color histogram is closest to the mean");
  add_common(select, o);
  select->add_option("--input-dir", o.input_dir, "Directory of candidate images");
  select->add_option("--output-dir", o.output_dir, "Where to write the histograms (default: beside the template)");
  select->add_option("--bins", o.bins, "Histogram bins per channel");

  auto* tile = app.add_subcommand("tile", "Cut images into fixed-size tiles");
  add_common(tile, o);
  tile->add_option("--input-dir", o.input_dir, "Directory of images to tile");
  tile->add_option("--output-dir", o.output_dir, "Directory for tiles and manifest.json");
  tile->add_option("--tile-size", o.tile_size, "Tile edge in pixels");
  tile->add_option("--edge-policy", o.edge_policy, "retain | discard");

  auto* normalize = app.add_subcommand("normalize", "Normalize every image in a directory against a template");
  add_common(normalize, o);
  normalize->add_option("--input-dir", o.input_dir, "Directory of source tiles");
  normalize->add_option("--template", o.template_path, "Template image path, or \"auto\"");
  normalize->add_option("--output-dir", o.output_dir, "Directory for outputs and manifest.json");
  normalize->add_option("--method", o.method, "reinhard | macenko | vahadane | pidr");
  normalize->add_option("--checkpoint", o.checkpoint, "Trained model (method pidr)");
  normalize->add_option("--bins", o.bins, "Histogram bins for automatic template selection");

  auto* train = app.add_subcommand("train", "Train the decoupled color/structure model on two domains");
  add_common(train, o);
  train->add_option("--domain-a", o.domain_a, "Directory of domain A tiles");
  train->add_option("--domain-b", o.domain_b, "Directory of domain B tiles");
  train->add_option("--output-dir", o.output_dir, "Directory for the loss curve and manifest");
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint path to write");
  train->add_option("--steps", o.steps, "Training steps");
  train->add_option("--learning-rate", o.learning_rate, "AdamW learning rate");
  train->add_option("--image-size", o.image_size, "Tile size the model is built for");

  auto* evaluate = app.add_subcommand("evaluate", "Score outputs against references with SSIM, MS-SSIM and UQI");
  add_common(evaluate, o);
  evaluate->add_option("--output-dir", o.output_dir, "Directory of images to score");
  evaluate->add_option("--reference-dir", o.reference_dir, "Directory of reference images (matched by file stem)");
  evaluate->add_option("--report", o.report, "CSV report path (default: <output-dir>/metrics.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : stainkit::cli::kExitError;
  }

  try {
    const RunConfig config = resolve(o);
    stainkit::set_warnings_quiet(o.quiet);
    if (select->parsed()) return stainkit::cli::cmd_select_template(config);
    if (tile->parsed()) return stainkit::cli::cmd_tile(config);
    if (normalize->parsed()) return stainkit::cli::cmd_normalize(config);
    if (train->parsed()) return stainkit::cli::cmd_train(config);
    if (evaluate->parsed()) {
      const std::string report = o.report.empty() ? config.output_dir + "/metrics.csv" : o.report;
      return stainkit::cli::cmd_evaluate(config, report);
    }
  } catch (const std::exception& e) {
    std::cerr << "[stainkit] error: " << e.what() << '\n';
    return stainkit::cli::kExitError;
  }
  return stainkit::cli::kExitError;
}

#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stainkit/checkpoint.hpp"
#include "stainkit/diagnostics.hpp"

namespace stainkit::cli {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw Error("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("config must be a JSON object");
  reject_unknown(j,
                 {"input_dir", "template", "output_dir", "checkpoint", "reference_dir", "method", "histogram_bins",
                  "seed", "threads", "tile", "model", "train"},
                 "config");
  RunConfig c;
  try {
    take(j, "input_dir", c.input_dir);
    take(j, "template", c.template_path);
    take(j, "output_dir", c.output_dir);
    take(j, "checkpoint", c.checkpoint);
    take(j, "reference_dir", c.reference_dir);
    take(j, "method", c.method);
    take(j, "histogram_bins", c.histogram_bins);
    take(j, "seed", c.seed);
    take(j, "threads", c.threads);
    if (j.contains("tile")) {
      const json& t = j.at("tile");
      reject_unknown(t, {"tile_size", "edge_policy"}, "tile");
      take(t, "tile_size", c.tile.tile_size);
      if (t.contains("edge_policy")) {
        const auto name = t.at("edge_policy").get<std::string>();
        const auto policy = parse_edge_policy(name);
        if (!policy) throw Error("edge_policy must be \"retain\" or \"discard\", got \"" + name + "\"");
        c.tile.edge_policy = *policy;
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"domain_a", "domain_b", "steps", "learning_rate", "beta1", "beta2", "weight_decay"}, "train");
      take(t, "domain_a", c.train.domain_a);
      take(t, "domain_b", c.train.domain_b);
      take(t, "steps", c.train.steps);
      take(t, "learning_rate", c.train.learning_rate);
      take(t, "beta1", c.train.beta1);
      take(t, "beta2", c.train.beta2);
      take(t, "weight_decay", c.train.weight_decay);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config field has the wrong type: ") + e.what());
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model").dump());
  if (c.threads == 0) throw Error("threads must be at least 1");
  if (c.tile.tile_size == 0) throw Error("tile_size must be positive");
  return c;
}

std::string serialize_run_config(const RunConfig& c) {
  json j = {{"input_dir", c.input_dir},
            {"template", c.template_path},
            {"output_dir", c.output_dir},
            {"checkpoint", c.checkpoint},
            {"reference_dir", c.reference_dir},
            {"method", c.method},
            {"histogram_bins", c.histogram_bins},
            {"seed", c.seed},
            {"threads", c.threads},
            {"tile", {{"tile_size", c.tile.tile_size}, {"edge_policy", std::string(edge_policy_name(c.tile.edge_policy))}}},
            {"model", json::parse(model_config_to_json(c.model))},
            {"train",
             {{"domain_a", c.train.domain_a},
              {"domain_b", c.train.domain_b},
              {"steps", c.train.steps},
              {"learning_rate", c.train.learning_rate},
              {"beta1", c.train.beta1},
              {"beta2", c.train.beta2},
              {"weight_decay", c.train.weight_decay}}}};
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

void apply_seed_environment(RunConfig& config) {
  const char* value = std::getenv("STAINKIT_SEED");
  if (value == nullptr || *value == '\0') return;
  char* end = nullptr;
  const unsigned long long seed = std::strtoull(value, &end, 10);
  if (end == value || *end != '\0') throw Error(std::string("STAINKIT_SEED is not an integer: ") + value);
  config.seed = seed;
}

}  // namespace stainkit::cli

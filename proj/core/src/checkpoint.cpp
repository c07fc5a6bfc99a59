#include "stainkit/checkpoint.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "stainkit/diagnostics.hpp"
#include "stainkit/tensor_io.hpp"

namespace stainkit {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'T', 'P', 'C'};

void write_string(std::ostream& out, const std::string& s) {
  io::write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, std::uint32_t limit) {
  const std::uint32_t n = io::read_u32(in);
  if (n > limit) throw Error("checkpoint: string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("checkpoint: truncated file");
  return s;
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  json j = {{"image_size", c.image_size},
            {"feature_channels", c.feature_channels},
            {"codebook_size", c.codebook_size},
            {"num_stain_blocks", c.num_stain_blocks},
            {"heads", c.heads},
            {"alpha", c.alpha},
            {"w_contra_color", c.w_contra_color},
            {"w_contra_structure", c.w_contra_structure},
            {"w_codebook", c.w_codebook},
            {"w_recon", c.w_recon},
            {"recon_both", c.recon_both},
            {"codebook_restart", c.codebook_restart},
            {"seed", c.seed}};
  return j.dump(2);
}

ModelConfig model_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("model config must be a JSON object");
  static const std::set<std::string> known = {
      "image_size", "feature_channels", "codebook_size", "num_stain_blocks", "heads", "alpha", "w_contra_color",
      "w_contra_structure", "w_codebook", "w_recon", "recon_both", "codebook_restart", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw Error("unknown model config key \"" + key + "\"");
  }
  ModelConfig c;
  try {
    take(j, "image_size", c.image_size);
    take(j, "feature_channels", c.feature_channels);
    take(j, "codebook_size", c.codebook_size);
    take(j, "num_stain_blocks", c.num_stain_blocks);
    take(j, "heads", c.heads);
    take(j, "alpha", c.alpha);
    take(j, "w_contra_color", c.w_contra_color);
    take(j, "w_contra_structure", c.w_contra_structure);
    take(j, "w_codebook", c.w_codebook);
    take(j, "w_recon", c.w_recon);
    take(j, "recon_both", c.recon_both);
    take(j, "codebook_restart", c.codebook_restart);
    take(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(std::string("model config has a field of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

void write_checkpoint(std::ostream& out, const PidrModel& model) {
  out.write(kMagic, 4);
  io::write_u32(out, kCheckpointVersion);
  write_string(out, model_config_to_json(model.config()));
  const auto& params = model.named_parameters();
  io::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    write_string(out, name);
    write_tensor(out, tensor);
  }
  if (!out) throw Error("checkpoint: write failed");
}

PidrModel read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic)) throw Error("not a checkpoint file (bad magic)");
  const std::uint32_t version = io::read_u32(in);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  PidrModel model(model_config_from_json(read_string(in, 1u << 20)));
  const auto& expected = model.named_parameters();
  const std::uint32_t count = io::read_u32(in);
  if (count != expected.size()) {
    throw Error("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                std::to_string(expected.size()));
  }
  std::string previous;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in, 4096);
    if (i > 0 && !(previous < name)) throw Error("checkpoint records are not in name order");
    previous = name;
    const auto it = expected.find(name);
    if (it == expected.end()) throw Error("checkpoint has unexpected tensor \"" + name + "\"");
    const Tensor loaded = read_tensor(in);
    if (loaded.shape() != it->second.shape()) {
      throw Error("checkpoint tensor \"" + name + "\" has shape " + shape_to_string(loaded.shape()) + ", expected " +
                  shape_to_string(it->second.shape()));
    }
    if (!loaded.all_finite()) throw Error("checkpoint tensor \"" + name + "\" holds non-finite values");
    Tensor target = it->second;
    std::copy(loaded.data().begin(), loaded.data().end(), target.mutable_data().begin());
  }
  model.codebook().reset_usage();
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const PidrModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
}

PidrModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace stainkit

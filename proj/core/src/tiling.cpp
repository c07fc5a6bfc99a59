#include "stainkit/tiling.hpp"

#include "stainkit/diagnostics.hpp"

namespace stainkit {
namespace {

std::vector<std::size_t> axis_offsets(std::size_t extent, std::size_t ts, EdgePolicy policy) {
  std::vector<std::size_t> offsets;
  for (std::size_t o = 0; o + ts <= extent; o += ts) offsets.push_back(o);
  if (policy == EdgePolicy::kRetain && extent % ts != 0) offsets.push_back(extent - ts);
  return offsets;
}

}  // namespace

std::optional<EdgePolicy> parse_edge_policy(std::string_view name) {
  if (name == "retain") return EdgePolicy::kRetain;
  if (name == "discard") return EdgePolicy::kDiscard;
  return std::nullopt;
}

std::string_view edge_policy_name(EdgePolicy policy) {
  return policy == EdgePolicy::kRetain ? "retain" : "discard";
}

std::vector<TileOrigin> tile_origins(std::size_t width, std::size_t height, const TileSpec& spec) {
  if (spec.tile_size == 0) throw Error("tile_size must be positive");
  if (width == 0 || height == 0) throw Error("cannot tile an empty image");
  if (spec.edge_policy == EdgePolicy::kRetain && (width < spec.tile_size || height < spec.tile_size)) {
    throw Error("image " + std::to_string(width) + "x" + std::to_string(height) + " is smaller than tile size " +
                std::to_string(spec.tile_size) + " in retain mode");
  }
  const auto xs = axis_offsets(width, spec.tile_size, spec.edge_policy);
  const auto ys = axis_offsets(height, spec.tile_size, spec.edge_policy);
  std::vector<TileOrigin> origins;
  origins.reserve(xs.size() * ys.size());
  for (std::size_t y : ys)
    for (std::size_t x : xs) origins.push_back({x, y});
  return origins;
}

std::vector<Tile> tile_image(const RgbImage& image, const TileSpec& spec) {
  std::vector<Tile> tiles;
  for (const auto& o : tile_origins(image.width(), image.height(), spec)) {
    tiles.push_back({o, image.crop(o.x, o.y, spec.tile_size, spec.tile_size)});
  }
  return tiles;
}

}  // namespace stainkit

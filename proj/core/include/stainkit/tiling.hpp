#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit {

enum class EdgePolicy {
  kRetain,   // final row/column tiles are shifted to end at the image border
  kDiscard,  // partial edge tiles are dropped
};

std::optional<EdgePolicy> parse_edge_policy(std::string_view name);
std::string_view edge_policy_name(EdgePolicy policy);

struct TileSpec {
  std::size_t tile_size = 256;
  EdgePolicy edge_policy = EdgePolicy::kRetain;
};

struct TileOrigin {
  std::size_t x = 0;
  std::size_t y = 0;
  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
};

struct Tile {
  TileOrigin origin;
  RgbImage image;
};

/// Tile origins in row-major order. Retain mode throws when the image is
/// smaller than a tile along either axis.
std::vector<TileOrigin> tile_origins(std::size_t width, std::size_t height, const TileSpec& spec);
std::vector<Tile> tile_image(const RgbImage& image, const TileSpec& spec);

}  // namespace stainkit

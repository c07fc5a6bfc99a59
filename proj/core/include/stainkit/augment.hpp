#pragma once

#include <cstdint>

#include "stainkit/tensor.hpp"

namespace stainkit {

/// Geometric transform parameters. The default value is the identity.
struct GeometricDraw {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int quarter_turns = 0;  // counter-clockwise, 0..3
  std::size_t crop_x = 0;
  std::size_t crop_y = 0;
  std::size_t crop_size = 0;  // 0 means the full image
};

/// Per-channel affine color jitter c·x + b.
struct ColorJitterDraw {
  float gain[3] = {1.0f, 1.0f, 1.0f};
  float offset[3] = {0.0f, 0.0f, 0.0f};
};

/// Random flips, quarter turns, and a square crop of 75–100% side length.
GeometricDraw draw_geometric(std::size_t size, std::uint64_t seed);
/// Gains in [0.7, 1.3] and offsets in [-0.15, 0.15].
ColorJitterDraw draw_color_jitter(std::uint64_t seed);

/// Applies a geometric draw to a square (1,3,S,S) image; the crop is
/// resampled back to S×S bilinearly. Not differentiable.
Tensor apply_geometric(const Tensor& image, const GeometricDraw& draw);
/// Applies the jitter without clamping. Not differentiable.
Tensor apply_color_jitter(const Tensor& image, const ColorJitterDraw& draw);

/// Same colors, moved pixels: the A' view.
Tensor augment_color_preserving(const Tensor& image, std::uint64_t seed);
/// Same geometry, shifted colors: the A'' view.
Tensor augment_structure_preserving(const Tensor& image, std::uint64_t seed);

}  // namespace stainkit

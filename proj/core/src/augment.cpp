#include "stainkit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stainkit/diagnostics.hpp"

namespace stainkit {
namespace {

void check_image(const Tensor& image, bool square) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw Error("augment: expected a (1,3,H,W) image, got " + shape_to_string(image.shape()));
  }
  if (square && image.dim(2) != image.dim(3)) throw Error("augment: geometric transforms need a square image");
}

// Source coordinate in the unrotated, unflipped frame for output pixel (x, y).
void source_coords(const GeometricDraw& d, std::size_t n, std::size_t x, std::size_t y, std::size_t& sx,
                   std::size_t& sy) {
  std::size_t u = x, v = y;
  for (int t = 0; t < d.quarter_turns; ++t) {
    const std::size_t nu = n - 1 - v, nv = u;  // inverse of one counter-clockwise turn
    u = nu;
    v = nv;
  }
  if (d.flip_horizontal) u = n - 1 - u;
  if (d.flip_vertical) v = n - 1 - v;
  sx = u;
  sy = v;
}

}  // namespace

GeometricDraw draw_geometric(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coin(0, 1), turns(0, 3);
  GeometricDraw d;
  d.flip_horizontal = coin(rng) == 1;
  d.flip_vertical = coin(rng) == 1;
  d.quarter_turns = turns(rng);
  const auto min_side = static_cast<std::size_t>(std::ceil(0.75 * static_cast<double>(size)));
  std::uniform_int_distribution<std::size_t> side(min_side, size);
  d.crop_size = side(rng);
  std::uniform_int_distribution<std::size_t> off(0, size - d.crop_size);
  d.crop_x = off(rng);
  d.crop_y = off(rng);
  return d;
}

ColorJitterDraw draw_color_jitter(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> gain(0.7f, 1.3f), offset(-0.15f, 0.15f);
  ColorJitterDraw d;
  for (int c = 0; c < 3; ++c) {
    d.gain[c] = gain(rng);
    d.offset[c] = offset(rng);
  }
  return d;
}

Tensor apply_geometric(const Tensor& image, const GeometricDraw& draw) {
  check_image(image, true);
  const std::size_t n = image.dim(2);
  const std::size_t crop = draw.crop_size == 0 ? n : draw.crop_size;
  if (draw.crop_x + crop > n || draw.crop_y + crop > n) throw Error("augment: crop exceeds the image");
  if (draw.quarter_turns < 0 || draw.quarter_turns > 3) throw Error("augment: quarter_turns must be in 0..3");
  const auto src = image.data();
  std::vector<float> out(src.size());
  // Crop-resize first (bilinear, pixel centers aligned), then flips and turns.
  std::vector<float> resized(src.size());
  const double scale = static_cast<double>(crop) / static_cast<double>(n);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* plane = src.data() + c * n * n;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        float value;
        if (crop == n) {
          value = plane[(draw.crop_y + y) * n + draw.crop_x + x];
        } else {
          const double fx = std::clamp((static_cast<double>(x) + 0.5) * scale - 0.5, 0.0, double(crop - 1));
          const double fy = std::clamp((static_cast<double>(y) + 0.5) * scale - 0.5, 0.0, double(crop - 1));
          const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
          const std::size_t x1 = std::min(x0 + 1, crop - 1), y1 = std::min(y0 + 1, crop - 1);
          const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
          auto at = [&](std::size_t xx, std::size_t yy) {
            return static_cast<double>(plane[(draw.crop_y + yy) * n + draw.crop_x + xx]);
          };
          value = static_cast<float>((1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x1, y0)) +
                                     ay * ((1 - ax) * at(x0, y1) + ax * at(x1, y1)));
        }
        resized[c * n * n + y * n + x] = value;
      }
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        std::size_t sx, sy;
        source_coords(draw, n, x, y, sx, sy);
        out[c * n * n + y * n + x] = resized[c * n * n + sy * n + sx];
      }
  return Tensor::from(image.shape(), std::move(out));
}

Tensor apply_color_jitter(const Tensor& image, const ColorJitterDraw& draw) {
  check_image(image, false);
  const std::size_t plane = image.dim(2) * image.dim(3);
  std::vector<float> out(image.data().begin(), image.data().end());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = draw.gain[c] * out[c * plane + i] + draw.offset[c];
  return Tensor::from(image.shape(), std::move(out));
}

Tensor augment_color_preserving(const Tensor& image, std::uint64_t seed) {
  check_image(image, true);
  return apply_geometric(image, draw_geometric(image.dim(2), seed));
}

Tensor augment_structure_preserving(const Tensor& image, std::uint64_t seed) {
  return apply_color_jitter(image, draw_color_jitter(seed));
}

}  // namespace stainkit

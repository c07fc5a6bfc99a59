#pragma once

// Deterministic images shared with tests/oracles/generate_oracles.py. The
// formulas must stay in sync with the Python side for the frozen values to
// remain meaningful.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "stainkit/image.hpp"

namespace fixtures {

inline double textured_value(std::size_t x, std::size_t y) {
  const double xd = static_cast<double>(x), yd = static_cast<double>(y);
  const double v = 128.0 + 60.0 * std::sin(xd / 5.0) * std::cos(yd / 7.0) + 30.0 * std::sin((xd + yd) / 3.0);
  return std::clamp(std::floor(v + 0.5), 0.0, 255.0);
}

inline stainkit::RgbImage gray_image(std::size_t size, double (*value)(std::size_t, std::size_t)) {
  stainkit::RgbImage img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(value(x, y));
  return img;
}

inline stainkit::RgbImage textured_gray(std::size_t size) { return gray_image(size, textured_value); }

inline stainkit::RgbImage inverted(const stainkit::RgbImage& img) {
  stainkit::RgbImage out = img;
  for (auto& p : out.mutable_pixels()) p = static_cast<std::uint8_t>(255 - p);
  return out;
}

inline double hash_uniform(std::uint64_t x, std::uint64_t y, std::uint64_t salt) {
  const std::uint64_t h = (x * 1103515245ull + y * 12345ull + 7ull * x * y + salt * 2654435761ull) % (1ull << 31);
  return static_cast<double>(h) / static_cast<double>(1ull << 31);
}

/// Uniform noise of standard deviation sigma, identical on every channel.
inline stainkit::RgbImage add_hash_noise(const stainkit::RgbImage& img, double sigma, std::uint64_t salt) {
  stainkit::RgbImage out = img;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double n = (hash_uniform(x, y, salt) - 0.5) * sigma * std::sqrt(12.0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(std::floor(img.at(x, y, c) + n + 0.5), 0.0, 255.0);
        out.at(x, y, c) = static_cast<std::uint8_t>(v);
      }
    }
  return out;
}

inline stainkit::RgbImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> px(w * h * 3);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng() & 0xff);
  return stainkit::RgbImage(w, h, std::move(px));
}

}  // namespace fixtures

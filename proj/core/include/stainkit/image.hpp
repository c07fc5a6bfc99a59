#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stainkit/tensor.hpp"

namespace stainkit {

/// Row-major interleaved 8-bit RGB image.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height, std::uint8_t fill = 0);
  RgbImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> pixels);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t pixel_count() const { return width_ * height_; }
  bool empty() const { return pixels_.empty(); }

  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> mutable_pixels() { return pixels_; }

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels_[(y * width_ + x) * 3 + c]; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels_[(y * width_ + x) * 3 + c]; }

  RgbImage crop(std::size_t x, std::size_t y, std::size_t w, std::size_t h) const;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// (1, 3, H, W) tensor with values in [0, 1].
Tensor image_to_tensor(const RgbImage& image);
/// Inverse of image_to_tensor: rounds and clamps to [0, 255]. Accepts (1,3,H,W) or (3,H,W).
RgbImage tensor_to_image(const Tensor& tensor);

/// Luma 0.299R + 0.587G + 0.114B as doubles, row-major.
std::vector<double> luminance(const RgbImage& image);

double mean_abs_difference(const RgbImage& a, const RgbImage& b);

}  // namespace stainkit

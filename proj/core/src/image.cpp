#include "stainkit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "stainkit/diagnostics.hpp"

namespace stainkit {

RgbImage::RgbImage(std::size_t width, std::size_t height, std::uint8_t fill)
    : RgbImage(width, height, std::vector<std::uint8_t>(width * height * 3, fill)) {}

RgbImage::RgbImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width == 0 || height == 0) throw Error("image extents must be positive");
  if (pixels_.size() != width * height * 3) {
    throw Error("pixel buffer of " + std::to_string(pixels_.size()) + " bytes does not match " +
                std::to_string(width) + "x" + std::to_string(height) + " RGB");
  }
}

RgbImage RgbImage::crop(std::size_t x, std::size_t y, std::size_t w, std::size_t h) const {
  if (x + w > width_ || y + h > height_) throw Error("crop rectangle exceeds image bounds");
  std::vector<std::uint8_t> out(w * h * 3);
  for (std::size_t row = 0; row < h; ++row) {
    const auto* src = pixels_.data() + ((y + row) * width_ + x) * 3;
    std::copy_n(src, w * 3, out.data() + row * w * 3);
  }
  return RgbImage(w, h, std::move(out));
}

Tensor image_to_tensor(const RgbImage& image) {
  const std::size_t w = image.width(), h = image.height(), n = w * h;
  std::vector<float> values(3 * n);
  const auto px = image.pixels();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) values[c * n + i] = static_cast<float>(px[i * 3 + c]) / 255.0f;
  return Tensor::from({1, 3, h, w}, std::move(values));
}

RgbImage tensor_to_image(const Tensor& tensor) {
  const auto& s = tensor.shape();
  const bool batched = s.size() == 4;
  if (!((batched && s[0] == 1 && s[1] == 3) || (s.size() == 3 && s[0] == 3))) {
    throw Error("tensor_to_image: expected (1,3,H,W) or (3,H,W), got " + shape_to_string(s));
  }
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1], n = w * h;
  std::vector<std::uint8_t> px(3 * n);
  const auto v = tensor.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float level = std::round(std::clamp(v[c * n + i], 0.0f, 1.0f) * 255.0f);
      px[i * 3 + c] = static_cast<std::uint8_t>(level);
    }
  return RgbImage(w, h, std::move(px));
}

std::vector<double> luminance(const RgbImage& image) {
  std::vector<double> out(image.pixel_count());
  const auto px = image.pixels();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.299 * px[i * 3] + 0.587 * px[i * 3 + 1] + 0.114 * px[i * 3 + 2];
  return out;
}

double mean_abs_difference(const RgbImage& a, const RgbImage& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw Error("mean_abs_difference: size mismatch");
  const auto pa = a.pixels(), pb = b.pixels();
  double total = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) total += std::abs(static_cast<int>(pa[i]) - static_cast<int>(pb[i]));
  return total / static_cast<double>(pa.size());
}

}  // namespace stainkit

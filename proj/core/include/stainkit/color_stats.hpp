#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit {

/// Per-channel RGB histogram with B bins per channel.
///
/// A normalized histogram has channels summing to 1; a raw one holds pixel counts.
class ColorHistogram {
 public:
  ColorHistogram(std::size_t bins, bool normalized);

  std::size_t bins() const { return bins_; }
  bool normalized() const { return normalized_; }
  std::span<const double> channel(std::size_t c) const { return channels_.at(c); }
  std::span<double> mutable_channel(std::size_t c) { return channels_.at(c); }

  friend bool operator==(const ColorHistogram&, const ColorHistogram&) = default;

 private:
  std::size_t bins_;
  bool normalized_;
  std::array<std::vector<double>, 3> channels_;
};

/// Optical density image, 3 floats per pixel, interleaved like RgbImage.
struct OdImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  std::size_t pixel_count() const { return width * height; }
};

inline constexpr std::size_t kDefaultHistogramBins = 256;

/// Histogram with pixel value v in bin floor(v / (256 / bins)); bins must divide 256 and be ≥ 2.
ColorHistogram compute_histogram(const RgbImage& image, std::size_t bins = kDefaultHistogramBins,
                                 bool normalize = true);
/// Per-bin arithmetic mean of normalized histograms, summed in list order.
ColorHistogram mean_histogram(std::span<const ColorHistogram> histograms);

/// W1 between two normalized 1-D histograms with unit bin spacing: Σ|CDF_p − CDF_q|.
double wasserstein_1d(std::span<const double> p, std::span<const double> q, double tolerance = 1e-6);
/// Sum of per-channel W1 distances.
double histogram_distance(const ColorHistogram& a, const ColorHistogram& b);

/// Index of the histogram closest to the mean histogram; lowest index wins ties.
std::size_t select_template(std::span<const ColorHistogram> histograms);
std::size_t select_template(std::span<const RgbImage> images, std::size_t bins = kDefaultHistogramBins);

/// OD = -log10((I + 1) / 256).
OdImage rgb_to_od(const RgbImage& image);
/// Inverse of rgb_to_od, rounded and clamped to [0, 255].
RgbImage od_to_rgb(const OdImage& od);
float intensity_to_od(float intensity);
float od_to_intensity(float od);

/// Plain-text 3×B matrix, one channel per line.
void write_histogram_text(std::ostream& out, const ColorHistogram& histogram);
ColorHistogram read_histogram_text(std::istream& in);

}  // namespace stainkit

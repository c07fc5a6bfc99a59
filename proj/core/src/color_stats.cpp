#include "stainkit/color_stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "stainkit/diagnostics.hpp"

namespace stainkit {

ColorHistogram::ColorHistogram(std::size_t bins, bool normalized) : bins_(bins), normalized_(normalized) {
  if (bins < 2) throw Error("histogram needs at least 2 bins");
  for (auto& ch : channels_) ch.assign(bins, 0.0);
}

ColorHistogram compute_histogram(const RgbImage& image, std::size_t bins, bool normalize) {
  if (bins < 2 || bins > 256 || 256 % bins != 0) {
    throw Error("bin count " + std::to_string(bins) + " must divide 256 (8, 16, 32, 64, 128 or 256)");
  }
  if (image.empty()) throw Error("histogram of an empty image");
  ColorHistogram hist(bins, normalize);
  const std::size_t width = 256 / bins;
  std::array<std::vector<std::uint64_t>, 3> counts;
  for (auto& c : counts) c.assign(bins, 0);
  const auto px = image.pixels();
  for (std::size_t i = 0; i < image.pixel_count(); ++i)
    for (std::size_t c = 0; c < 3; ++c) ++counts[c][px[i * 3 + c] / width];
  const double total = static_cast<double>(image.pixel_count());
  for (std::size_t c = 0; c < 3; ++c) {
    auto ch = hist.mutable_channel(c);
    for (std::size_t b = 0; b < bins; ++b) {
      ch[b] = normalize ? static_cast<double>(counts[c][b]) / total : static_cast<double>(counts[c][b]);
    }
  }
  return hist;
}

ColorHistogram mean_histogram(std::span<const ColorHistogram> histograms) {
  if (histograms.empty()) throw Error("mean of an empty histogram list");
  const std::size_t bins = histograms.front().bins();
  ColorHistogram out(bins, true);
  for (const auto& h : histograms) {
    if (h.bins() != bins) throw Error("mean_histogram: mixed bin counts");
    if (!h.normalized()) throw Error("mean_histogram: histograms must be normalized");
    for (std::size_t c = 0; c < 3; ++c) {
      auto dst = out.mutable_channel(c);
      const auto src = h.channel(c);
      for (std::size_t b = 0; b < bins; ++b) dst[b] += src[b];
    }
  }
  const double n = static_cast<double>(histograms.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : out.mutable_channel(c)) v /= n;
  return out;
}

double wasserstein_1d(std::span<const double> p, std::span<const double> q, double tolerance) {
  if (p.size() != q.size()) throw Error("wasserstein_1d: length mismatch");
  if (p.empty()) throw Error("wasserstein_1d: empty histograms");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw Error("wasserstein_1d: negative mass");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > tolerance || std::abs(sq - 1.0) > tolerance) {
    throw Error("wasserstein_1d: inputs must be normalized (sums " + std::to_string(sp) + ", " + std::to_string(sq) +
                ")");
  }
  // The last CDF difference is sp - sq ≈ 0 and is excluded.
  double cdf_diff = 0.0, total = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    cdf_diff += p[i] - q[i];
    total += std::abs(cdf_diff);
  }
  return total;
}

double histogram_distance(const ColorHistogram& a, const ColorHistogram& b) {
  if (a.bins() != b.bins()) throw Error("histogram_distance: bin count mismatch");
  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c) total += wasserstein_1d(a.channel(c), b.channel(c));
  return total;
}

std::size_t select_template(std::span<const ColorHistogram> histograms) {
  // Distances closer than this count as tied; W1 values of equally sized
  // images sit on a grid of 1/(images·pixels), far coarser than this.
  constexpr double kTieTolerance = 1e-9;
  if (histograms.empty()) throw Error("select_template: empty dataset");
  const ColorHistogram mean = mean_histogram(histograms);
  std::size_t best = 0;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    const double d = histogram_distance(mean, histograms[i]);
    if (d < best_distance - kTieTolerance) {
      best_distance = d;
      best = i;
    }
  }
  return best;
}

std::size_t select_template(std::span<const RgbImage> images, std::size_t bins) {
  if (images.empty()) throw Error("select_template: empty dataset");
  std::vector<ColorHistogram> hists;
  hists.reserve(images.size());
  for (const auto& img : images) hists.push_back(compute_histogram(img, bins));
  return select_template(hists);
}

float intensity_to_od(float intensity) { return -std::log10((intensity + 1.0f) / 256.0f); }

float od_to_intensity(float od) { return 256.0f * std::pow(10.0f, -od) - 1.0f; }

OdImage rgb_to_od(const RgbImage& image) {
  // 256-entry table keeps the transform bit-identical across calls.
  static const auto table = [] {
    std::array<float, 256> t{};
    for (int v = 0; v < 256; ++v) t[v] = intensity_to_od(static_cast<float>(v));
    return t;
  }();
  OdImage od{image.width(), image.height(), std::vector<float>(image.pixels().size())};
  const auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) od.values[i] = table[px[i]];
  return od;
}

RgbImage od_to_rgb(const OdImage& od) {
  if (od.values.size() != od.width * od.height * 3) throw Error("od_to_rgb: value buffer does not match extents");
  std::vector<std::uint8_t> px(od.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (!std::isfinite(od.values[i])) throw Error("od_to_rgb: non-finite optical density");
    const float level = std::round(od_to_intensity(od.values[i]));
    px[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0f, 255.0f));
  }
  return RgbImage(od.width, od.height, std::move(px));
}

void write_histogram_text(std::ostream& out, const ColorHistogram& histogram) {
  out << std::setprecision(17);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto ch = histogram.channel(c);
    for (std::size_t b = 0; b < ch.size(); ++b) out << (b ? " " : "") << ch[b];
    out << '\n';
  }
}

ColorHistogram read_histogram_text(std::istream& in) {
  std::array<std::vector<double>, 3> rows;
  std::string line;
  for (auto& row : rows) {
    if (!std::getline(in, line)) throw Error("histogram text: expected 3 lines");
    std::istringstream ls(line);
    double v;
    while (ls >> v) row.push_back(v);
  }
  if (rows[0].size() != rows[1].size() || rows[0].size() != rows[2].size()) {
    throw Error("histogram text: ragged rows");
  }
  double s = 0.0;
  for (double v : rows[0]) s += v;
  ColorHistogram hist(rows[0].size(), std::abs(s - 1.0) < 1e-6);
  for (std::size_t c = 0; c < 3; ++c) std::copy(rows[c].begin(), rows[c].end(), hist.mutable_channel(c).begin());
  return hist;
}

}  // namespace stainkit

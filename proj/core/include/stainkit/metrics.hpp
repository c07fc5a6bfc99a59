#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit {

/// Grayscale plane of doubles, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;
};

Plane luminance_plane(const RgbImage& image);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

/// Mean SSIM over all fully contained Gaussian windows of the luma planes.
double ssim(const RgbImage& a, const RgbImage& b, const SsimOptions& options = {});
double ssim(const Plane& a, const Plane& b, const SsimOptions& options = {});

/// Mean luminance term and mean contrast-structure term of SSIM.
struct SsimComponents {
  double ssim = 0.0;
  double luminance = 0.0;
  double contrast_structure = 0.0;
};
SsimComponents ssim_components(const Plane& a, const Plane& b, const SsimOptions& options = {});

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsimResult {
  double value = 0.0;
  std::size_t scales = 0;  // < 5 when the image is too small for the full pyramid
};

/// Five-scale MS-SSIM with 2×2 mean downsampling. Small images use fewer
/// scales with renormalized weights; negative contrast-structure terms are
/// clamped to zero before exponentiation.
MsSsimResult ms_ssim_detailed(const RgbImage& a, const RgbImage& b, const SsimOptions& options = {});
double ms_ssim(const RgbImage& a, const RgbImage& b, const SsimOptions& options = {});

/// Universal quality index: SSIM with zero constants over 8×8 uniform
/// windows. Windows with a zero denominator are skipped and counted in
/// diagnostics(); throws when every window is degenerate.
double uqi(const RgbImage& a, const RgbImage& b, std::size_t window = 8);
double uqi(const Plane& a, const Plane& b, std::size_t window = 8);

struct MetricRow {
  std::string image_id;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double uqi = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean() const;
};

MetricRow evaluate_pair(const std::string& id, const RgbImage& output, const RgbImage& reference);
/// CSV with header image_id,ssim,ms_ssim,uqi and a final MEAN row.
void write_metric_csv(std::ostream& out, const MetricReport& report);

}  // namespace stainkit

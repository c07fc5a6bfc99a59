#include "stainkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "stainkit/diagnostics.hpp"

namespace stainkit {
namespace {

void check_same_size(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) throw Error("metric inputs differ in size");
}

std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

// "Valid" separable filtering: output is (w - k + 1) × (h - k + 1).
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t ow = in.width - n + 1, oh = in.height - n + 1;
  std::vector<double> tmp(ow * in.height);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * in.values[y * in.width + x + i];
      tmp[y * ow + x] = acc;
    }
  Plane out{ow, oh, std::vector<double>(ow * oh)};
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp[(y + i) * ow + x];
      out.values[y * ow + x] = acc;
    }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out{a.width, a.height, std::vector<double>(a.values.size())};
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

// Local statistics over the same windows; sigma_ab is computed with the same
// expression as the variances so identical inputs give exactly equal terms.
struct LocalStats {
  Plane mu_a, mu_b, var_a, var_b, cov;
};

LocalStats local_stats(const Plane& a, const Plane& b, const std::vector<double>& k) {
  LocalStats s{filter_valid(a, k), filter_valid(b, k), filter_valid(product(a, a), k), filter_valid(product(b, b), k),
               filter_valid(product(a, b), k)};
  for (std::size_t i = 0; i < s.mu_a.values.size(); ++i) {
    const double ma = s.mu_a.values[i], mb = s.mu_b.values[i];
    s.var_a.values[i] -= ma * ma;
    s.var_b.values[i] -= mb * mb;
    s.cov.values[i] -= ma * mb;
  }
  return s;
}

Plane downsample2(const Plane& in) {
  Plane out{in.width / 2, in.height / 2, {}};
  out.values.resize(out.width * out.height);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      const std::size_t i = 2 * y * in.width + 2 * x;
      out.values[y * out.width + x] =
          0.25 * (in.values[i] + in.values[i + 1] + in.values[i + in.width] + in.values[i + in.width + 1]);
    }
  return out;
}

}  // namespace

Plane luminance_plane(const RgbImage& image) { return Plane{image.width(), image.height(), luminance(image)}; }

SsimComponents ssim_components(const Plane& a, const Plane& b, const SsimOptions& options) {
  check_same_size(a, b);
  if (std::min(a.width, a.height) < options.window) throw Error("image is smaller than the SSIM window");
  const double c1 = std::pow(options.k1 * options.dynamic_range, 2.0);
  const double c2 = std::pow(options.k2 * options.dynamic_range, 2.0);
  const auto s = local_stats(a, b, gaussian_kernel(options.window, options.sigma));
  SsimComponents out;
  const std::size_t n = s.mu_a.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = s.mu_a.values[i], mb = s.mu_b.values[i];
    const double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    const double cs = (2.0 * s.cov.values[i] + c2) / (s.var_a.values[i] + s.var_b.values[i] + c2);
    out.luminance += l;
    out.contrast_structure += cs;
    out.ssim += l * cs;
  }
  out.luminance /= static_cast<double>(n);
  out.contrast_structure /= static_cast<double>(n);
  out.ssim /= static_cast<double>(n);
  return out;
}

double ssim(const Plane& a, const Plane& b, const SsimOptions& options) { return ssim_components(a, b, options).ssim; }

double ssim(const RgbImage& a, const RgbImage& b, const SsimOptions& options) {
  return ssim(luminance_plane(a), luminance_plane(b), options);
}

MsSsimResult ms_ssim_detailed(const RgbImage& a, const RgbImage& b, const SsimOptions& options) {
  Plane pa = luminance_plane(a), pb = luminance_plane(b);
  check_same_size(pa, pb);
  std::size_t scales = 0;
  for (std::size_t s = std::min(pa.width, pa.height); scales < 5 && s >= options.window; s /= 2) ++scales;
  if (scales == 0) throw Error("image is smaller than the MS-SSIM window");
  // The published weights are rounded to 4 decimals and sum to 1.0001, so
  // they are always renormalized over the scales in use.
  double weight_total = 0.0;
  for (std::size_t i = 0; i < scales; ++i) weight_total += kMsSsimWeights[i];
  if (scales < 5) ++diagnostics().msssim_scale_reductions;
  double normalized_total = 0.0;
  for (std::size_t i = 0; i < scales; ++i) normalized_total += kMsSsimWeights[i] / weight_total;
  if (std::abs(normalized_total - 1.0) > 1e-12) throw Error("MS-SSIM weights do not sum to 1");

  double value = 1.0;
  for (std::size_t i = 0; i < scales; ++i) {
    const double w = kMsSsimWeights[i] / weight_total;
    const auto comp = ssim_components(pa, pb, options);
    const double term = i + 1 == scales ? comp.ssim : comp.contrast_structure;
    value *= std::pow(std::max(term, 0.0), w);
    if (i + 1 < scales) {
      pa = downsample2(pa);
      pb = downsample2(pb);
    }
  }
  return {value, scales};
}

double ms_ssim(const RgbImage& a, const RgbImage& b, const SsimOptions& options) {
  return ms_ssim_detailed(a, b, options).value;
}

double uqi(const Plane& a, const Plane& b, std::size_t window) {
  check_same_size(a, b);
  if (std::min(a.width, a.height) < window || window == 0) throw Error("image is smaller than the UQI window");
  const std::vector<double> box(window, 1.0 / static_cast<double>(window));
  const auto s = local_stats(a, b, box);
  double total = 0.0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t i = 0; i < s.mu_a.values.size(); ++i) {
    const double ma = s.mu_a.values[i], mb = s.mu_b.values[i];
    const double denom = (s.var_a.values[i] + s.var_b.values[i]) * (ma * ma + mb * mb);
    if (denom == 0.0) {
      ++skipped;
      continue;
    }
    total += 4.0 * s.cov.values[i] * ma * mb / denom;
    ++used;
  }
  diagnostics().uqi_degenerate_windows += skipped;
  if (used == 0) throw Error("uqi: every window is degenerate (constant inputs)");
  return total / static_cast<double>(used);
}

double uqi(const RgbImage& a, const RgbImage& b, std::size_t window) {
  return uqi(luminance_plane(a), luminance_plane(b), window);
}

MetricRow MetricReport::mean() const {
  MetricRow m{"MEAN", 0.0, 0.0, 0.0};
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.ssim += r.ssim;
    m.ms_ssim += r.ms_ssim;
    m.uqi += r.uqi;
  }
  const double n = static_cast<double>(rows.size());
  m.ssim /= n;
  m.ms_ssim /= n;
  m.uqi /= n;
  return m;
}

MetricRow evaluate_pair(const std::string& id, const RgbImage& output, const RgbImage& reference) {
  return {id, ssim(output, reference), ms_ssim(output, reference), uqi(output, reference)};
}

void write_metric_csv(std::ostream& out, const MetricReport& report) {
  out << "image_id,ssim,ms_ssim,uqi\n" << std::setprecision(10);
  auto row = [&](const MetricRow& r) { out << r.image_id << ',' << r.ssim << ',' << r.ms_ssim << ',' << r.uqi << '\n'; };
  for (const auto& r : report.rows) row(r);
  row(report.mean());
}

}  // namespace stainkit

#include "stainkit/lab.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace stainkit {
namespace {

constexpr double kWhite[3] = {0.95047, 1.0, 1.08883};
constexpr double kDelta = 6.0 / 29.0;

const Eigen::Matrix3d& rgb_to_xyz() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.4124564, 0.3575761, 0.1804375,  //
                                    0.2126729, 0.7151522, 0.0721750,                        //
                                    0.0193339, 0.1191920, 0.9503041)
                                       .finished();
  return m;
}

const Eigen::Matrix3d& xyz_to_rgb() {
  static const Eigen::Matrix3d m = rgb_to_xyz().inverse();
  return m;
}

double srgb_to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

double linear_to_srgb(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055; }

double lab_f(double t) { return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0; }

double lab_f_inv(double t) { return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0); }

const std::array<double, 256>& linear_table() {
  static const auto table = [] {
    std::array<double, 256> t{};
    for (int v = 0; v < 256; ++v) t[v] = srgb_to_linear(v / 255.0);
    return t;
  }();
  return table;
}

}  // namespace

Lab srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const auto& lin = linear_table();
  const Eigen::Vector3d xyz = rgb_to_xyz() * Eigen::Vector3d(lin[r], lin[g], lin[b]);
  const double fx = lab_f(xyz[0] / kWhite[0]);
  const double fy = lab_f(xyz[1] / kWhite[1]);
  const double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<std::uint8_t, 3> lab_to_srgb(const Lab& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const Eigen::Vector3d xyz(kWhite[0] * lab_f_inv(fx), kWhite[1] * lab_f_inv(fy), kWhite[2] * lab_f_inv(fz));
  const Eigen::Vector3d lin = xyz_to_rgb() * xyz;
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double s = linear_to_srgb(std::clamp(lin[c], 0.0, 1.0));
    out[c] = static_cast<std::uint8_t>(std::lround(std::clamp(s * 255.0, 0.0, 255.0)));
  }
  return out;
}

}  // namespace stainkit

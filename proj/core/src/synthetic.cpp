#include "stainkit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stainkit::synthetic {
namespace {

struct Blob {
  double x, y, rx, ry, angle, amplitude;
};

double smoothstep(double e0, double e1, double v) {
  const double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

}  // namespace

RgbImage he_tile(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double unit = s / 64.0;

  const double stroma = 0.25 + 0.15 * u(rng);
  std::vector<Blob> bumps(3 + rng() % 4), lumens(rng() % 3), nuclei(5 + rng() % 8);
  for (auto& b : bumps) b = {u(rng) * s, u(rng) * s, (0.15 + 0.2 * u(rng)) * s, 0, 0, 0.15 + 0.35 * u(rng)};
  for (auto& b : lumens) b = {u(rng) * s, u(rng) * s, (0.08 + 0.1 * u(rng)) * s, 0, 0, 0};
  for (auto& n : nuclei) {
    n = {u(rng) * s, u(rng) * s, (2.5 + 3.5 * u(rng)) * unit, 0, u(rng) * 3.14159265358979, 0.6 + 0.5 * u(rng)};
    n.ry = n.rx * (0.6 + 0.4 * u(rng));
  }
  std::normal_distribution<double> noise(0.0, 0.01);

  RgbImage img(size, size);
  for (std::size_t py = 0; py < size; ++py)
    for (std::size_t px = 0; px < size; ++px) {
      const double x = static_cast<double>(px) + 0.5, y = static_cast<double>(py) + 0.5;
      double e = stroma;
      for (const auto& b : bumps) {
        const double r2 = ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (b.rx * b.rx);
        e += b.amplitude * std::exp(-0.5 * r2);
      }
      for (const auto& l : lumens) {
        const double r = std::hypot(x - l.x, y - l.y) / l.rx;
        e *= smoothstep(0.7, 1.2, r);
      }
      double h = 0.04;
      for (const auto& n : nuclei) {
        const double c = std::cos(n.angle), sn = std::sin(n.angle);
        const double dx = (x - n.x) * c + (y - n.y) * sn, dy = -(x - n.x) * sn + (y - n.y) * c;
        const double r = std::sqrt(dx * dx / (n.rx * n.rx) + dy * dy / (n.ry * n.ry));
        h = std::max(h, n.amplitude * (1.0 - smoothstep(0.75, 1.1, r)));
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double od = std::max(0.0, h * kHematoxylin[ch] + e * kEosin[ch] + noise(rng));
        img.at(px, py, ch) = to_byte(std::pow(10.0, -od));
      }
    }
  return img;
}

RgbImage remap_domain_b(const RgbImage& image) {
  RgbImage out(image.width(), image.height());
  const auto src = image.pixels();
  auto dst = out.mutable_pixels();
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const double r = src[3 * i] / 255.0, g = src[3 * i + 1] / 255.0, b = src[3 * i + 2] / 255.0;
    dst[3 * i] = to_byte(0.72 * std::pow(r, 1.6) + 0.12 * b);
    dst[3 * i + 1] = to_byte(0.85 * std::pow(g, 0.75) + 0.05 * r);
    dst[3 * i + 2] = to_byte(0.22 + 0.78 * std::pow(b, 0.6));
  }
  return out;
}

TwoDomainDataset two_domain_dataset(std::size_t per_domain, std::size_t size, std::uint64_t seed) {
  TwoDomainDataset data;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < per_domain; ++i) data.domain_a.push_back(he_tile(size, rng()));
  for (std::size_t i = 0; i < per_domain; ++i) data.domain_b.push_back(remap_domain_b(he_tile(size, rng())));
  return data;
}

StainMatrix random_stain_matrix(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.06);
  for (;;) {
    Vec3 h = kHematoxylin, e = kEosin;
    for (std::size_t c = 0; c < 3; ++c) {
      h[c] = std::max(0.02, h[c] + jitter(rng));
      e[c] = std::max(0.02, e[c] + jitter(rng));
    }
    StainMatrix m(h, e);
    if (angle_degrees(m.hematoxylin(), m.eosin()) >= 20.0) return m;
  }
}

PlantedTile planted_od_tile(std::size_t size, const StainMatrix& stains, double noise_sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0), amount(0.4, 1.2);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  const std::size_t n = size * size;
  PlantedTile tile{OdImage{size, size, std::vector<float>(3 * n)}, stains,
                   ConcentrationMap{size, size, std::vector<float>(2 * n)}};
  for (std::size_t i = 0; i < n; ++i) {
    const double kind = u(rng);
    double ch = 0.0, ce = 0.0;
    if (kind < 0.4) {
      ch = amount(rng);
    } else if (kind < 0.8) {
      ce = amount(rng);
    } else if (kind < 0.95) {
      ch = amount(rng) * u(rng);
      ce = amount(rng) * u(rng);
    } else {
      ch = 0.02 * u(rng);
      ce = 0.02 * u(rng);
    }
    tile.concentrations.values[2 * i] = static_cast<float>(ch);
    tile.concentrations.values[2 * i + 1] = static_cast<float>(ce);
    for (std::size_t c = 0; c < 3; ++c) {
      const double od = ch * stains.hematoxylin()[c] + ce * stains.eosin()[c] + noise(rng);
      tile.od.values[3 * i + c] = static_cast<float>(od);
    }
  }
  return tile;
}

}  // namespace stainkit::synthetic

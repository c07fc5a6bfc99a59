#pragma once

#include <cstdint>
#include <vector>

#include "stainkit/classical.hpp"
#include "stainkit/color_stats.hpp"
#include "stainkit/image.hpp"

namespace stainkit::synthetic {

/// Reference optical-density directions of hematoxylin and eosin.
inline constexpr Vec3 kHematoxylin = {0.650, 0.704, 0.286};
inline constexpr Vec3 kEosin = {0.072, 0.990, 0.105};

/// H&E-like tile rendered through Beer–Lambert: a smooth eosin stroma field
/// with pale lumen regions and hematoxylin-dense nuclei.
RgbImage he_tile(std::size_t size, std::uint64_t seed);

/// Fixed per-channel nonlinear remap with cross-channel mixing, used to
/// derive a second scanner/stain "domain" from the first.
RgbImage remap_domain_b(const RgbImage& image);

struct TwoDomainDataset {
  std::vector<RgbImage> domain_a;
  std::vector<RgbImage> domain_b;  // remapped tiles drawn independently of domain_a
};

TwoDomainDataset two_domain_dataset(std::size_t per_domain, std::size_t size, std::uint64_t seed);

/// Stain pair jittered around the H&E references; the two stay ≥ 20° apart.
StainMatrix random_stain_matrix(std::uint64_t seed);

struct PlantedTile {
  OdImage od;
  StainMatrix stains;
  ConcentrationMap concentrations;
};

/// Per-pixel OD = stains · c + N(0, noise_sigma²). 80% of the pixels carry a
/// single stain (split evenly), 15% a mixture and 5% faint background.
PlantedTile planted_od_tile(std::size_t size, const StainMatrix& stains, double noise_sigma, std::uint64_t seed);

}  // namespace stainkit::synthetic

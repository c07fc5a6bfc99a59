#pragma once

#include <array>
#include <cstdint>

namespace stainkit {

using Lab = std::array<double, 3>;

/// 8-bit sRGB to CIE L*a*b* under the D65 white point.
Lab srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
/// Inverse of srgb_to_lab; out-of-gamut results are clamped before rounding.
std::array<std::uint8_t, 3> lab_to_srgb(const Lab& lab);

}  // namespace stainkit

#pragma once

#include <filesystem>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit {

/// Reads PNG or binary PPM (P6, maxval 255), detected by file signature.
RgbImage read_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG. Output bytes depend only on the pixels.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

/// True for extensions read_image understands (.png, .ppm).
bool is_image_path(const std::filesystem::path& path);
/// Image files directly inside `dir`, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace stainkit

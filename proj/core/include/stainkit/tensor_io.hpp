#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "stainkit/tensor.hpp"

namespace stainkit {

/// Tensor container: "STPK", u32 version, u32 rank, u64 extents[rank],
/// f32 data[numel]; all little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

namespace io {

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);

}  // namespace io
}  // namespace stainkit

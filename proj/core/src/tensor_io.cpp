#include "stainkit/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "stainkit/diagnostics.hpp"

namespace stainkit {
namespace io {
namespace {

template <class T>
void write_le(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <class T>
T read_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw Error("unexpected end of tensor stream");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }

}  // namespace io

namespace {
constexpr char kMagic[4] = {'S', 'T', 'P', 'K'};
}

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic, 4);
  io::write_u32(out, kTensorFormatVersion);
  io::write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto e : tensor.shape()) io::write_u64(out, e);
  for (float v : tensor.data()) io::write_f32(out, v);
  if (!out) throw Error("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error("not a tensor record (bad magic)");
  const auto version = io::read_u32(in);
  if (version != kTensorFormatVersion) throw Error("unsupported tensor format version " + std::to_string(version));
  const auto rank = io::read_u32(in);
  if (rank > 4) throw Error("tensor record rank above 4");
  Shape shape(rank);
  for (auto& e : shape) e = io::read_u64(in);
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = io::read_f32(in);
  return Tensor::from(shape, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace stainkit

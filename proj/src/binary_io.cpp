#include "sat/binary_io.hpp"

#include <bit>
#include <fstream>

namespace sat::io {

void write_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void write_f32(std::ostream& os, std::span<const float> values) {
  for (float f : values) write_u32(os, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw IoError("unexpected end of file");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

std::vector<float> read_f32(std::istream& is, std::size_t count) {
  std::vector<float> out(count);
  for (auto& f : out) f = std::bit_cast<float>(read_u32(is));
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kTensorMagic.data(), kTensorMagic.size());
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  write_f32(os, t.data());
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor<float> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kTensorMagic) {
      throw IoError("bad magic");
    }
    const std::uint32_t rank = read_u32(is);
    if (rank == 0 || rank > 8) throw IoError("implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = read_u32(is);
      if (d == 0) throw IoError("zero-length dimension");
    }
    std::vector<float> values = read_f32(is, numel(shape));
    if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes");
    return Tensor<float>(std::move(shape), std::move(values));
  } catch (const IoError& e) {
    throw IoError(path.filename().string() + ": " + e.what());
  }
}

}  // namespace sat::io

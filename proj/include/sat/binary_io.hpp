#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sat/tensor.hpp"

namespace sat::io {

// Little-endian scalar encoding, independent of host byte order.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, std::span<const float> values);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
std::vector<float> read_f32(std::istream& is, std::size_t count);

// Tensor file: 8-byte magic, u32 rank, u32 dims, then row-major f32 payload.
inline constexpr std::array<char, 8> kTensorMagic = {'S', 'A', 'T', 'T', 'N', 'S', 'R', '1'};
void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor_file(const std::filesystem::path& path);

}  // namespace sat::io

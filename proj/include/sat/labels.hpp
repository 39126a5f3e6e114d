#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace sat {

// Row-major [batch x regions] matrix of 1-indexed ordinal scores.
struct LabelMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> values;

  LabelMatrix() = default;
  LabelMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0) {}

  int& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  int at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Canonical region order used throughout (Sauvegrain landmarks across the
// AP and lateral views).
inline constexpr std::array<std::string_view, 5> kRegionNames = {
    "lateral_condyle", "trochlea", "proximal_ap", "olecranon", "proximal_lateral"};

inline std::string_view region_name(std::size_t r) {
  return r < kRegionNames.size() ? kRegionNames[r] : std::string_view("region");
}

}  // namespace sat

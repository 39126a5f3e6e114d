#include "sat/init.hpp"

#include <cmath>

namespace sat {

std::vector<double> truncated_normal(std::mt19937_64& rng, std::size_t n, double std) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = z * std;
  }
  return out;
}

}  // namespace sat

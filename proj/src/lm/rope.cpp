#include "tabforge/lm/rope.hpp"

#include <cmath>

#include "tabforge/error.hpp"

namespace tabforge::lm {

std::vector<double> rope_rotate(std::span<const double> vec, std::size_t position, double base) {
  if (vec.size() % 2 != 0) throw ConfigError("RoPE needs an even head dimension");
  if (!(base > 0.0)) throw ConfigError("RoPE base must be positive");
  RopeTable table(position + 1, vec.size(), base);
  std::vector<double> out(vec.begin(), vec.end());
  table.apply(out.data(), position);
  return out;
}

RopeTable::RopeTable(std::size_t max_positions, std::size_t d_head, double base)
    : max_positions_(max_positions), d_head_(d_head) {
  if (d_head % 2 != 0) throw ConfigError("RoPE needs an even head dimension");
  if (!(base > 0.0)) throw ConfigError("RoPE base must be positive");
  const std::size_t half = d_head / 2;
  cos_.resize(max_positions * half);
  sin_.resize(max_positions * half);
  for (std::size_t i = 0; i < half; ++i) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
    for (std::size_t p = 0; p < max_positions; ++p) {
      const double angle = static_cast<double>(p) * theta;
      cos_[p * half + i] = std::cos(angle);
      sin_[p * half + i] = std::sin(angle);
    }
  }
}

}  // namespace tabforge::lm

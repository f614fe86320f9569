#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tabforge::lm {

// Rotates consecutive pairs (2i, 2i+1) of a per-head vector by
// position * base^(-2i / d_head). Throws ConfigError for odd lengths.
std::vector<double> rope_rotate(std::span<const double> vec, std::size_t position, double base);

// Precomputed cos/sin of every (position, pair) angle.
class RopeTable {
 public:
  RopeTable() = default;
  RopeTable(std::size_t max_positions, std::size_t d_head, double base);

  std::size_t d_head() const noexcept { return d_head_; }
  std::size_t max_positions() const noexcept { return max_positions_; }
  double cos(std::size_t pos, std::size_t pair) const { return cos_[pos * (d_head_ / 2) + pair]; }
  double sin(std::size_t pos, std::size_t pair) const { return sin_[pos * (d_head_ / 2) + pair]; }

  // In place on one head slice; inverse = true applies the transpose, which
  // is the backward pass of the rotation.
  template <typename Scalar>
  void apply(Scalar* head, std::size_t pos, bool inverse = false) const {
    const std::size_t half = d_head_ / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const auto c = static_cast<Scalar>(cos(pos, i));
      const auto s = static_cast<Scalar>(inverse ? -sin(pos, i) : sin(pos, i));
      const Scalar x0 = head[2 * i];
      const Scalar x1 = head[2 * i + 1];
      head[2 * i] = x0 * c - x1 * s;
      head[2 * i + 1] = x0 * s + x1 * c;
    }
  }

 private:
  std::size_t max_positions_ = 0;
  std::size_t d_head_ = 0;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

}  // namespace tabforge::lm

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace tabforge {

// Fractional digits kept by canonicalization.
inline constexpr int kNumericPrecision = 5;

// Exact base-10 number: (-1)^negative * digits * 10^-scale.
//
// `digits` has no leading zeros ("0" for zero) and `scale` is >= 0. Zero is
// never negative. Parsing never goes through binary floating point, so
// rounding at the fifth fractional digit is exact.
class Decimal {
 public:
  Decimal() = default;

  // Accepts [+-]? (d+ (. d*)? | . d+) ([eE] [+-]? d+)?; returns nullopt for
  // anything else, including inf/nan spellings and exponents beyond +-1000.
  static std::optional<Decimal> parse(std::string_view text);

  // Shortest round-trip representation of a finite double. Throws DomainError
  // for NaN and infinities.
  static Decimal from_double(double value);

  bool negative() const noexcept { return negative_; }
  const std::string& digits() const noexcept { return digits_; }
  int scale() const noexcept { return scale_; }
  bool is_zero() const noexcept { return digits_ == "0"; }

  // Round half-to-even to `places` fractional digits, then strip trailing
  // fractional zeros.
  Decimal rounded(int places) const;

  // Plain positional notation, no exponent, no trailing fractional zeros.
  std::string to_string() const;

  double to_double() const;

  friend bool operator==(const Decimal&, const Decimal&) = default;

 private:
  void normalize();

  bool negative_ = false;
  std::string digits_ = "0";
  int scale_ = 0;
};

// Rounds to kNumericPrecision digits half-to-even and renders canonically:
// 3.141592653 -> "3.14159", 2.500000 -> "2.5", -0.000001 -> "0".
std::string canonicalize_numeric(const Decimal& value);
std::string canonicalize_numeric(double value);

}  // namespace tabforge

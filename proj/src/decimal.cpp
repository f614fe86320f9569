#include "tabforge/decimal.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "tabforge/error.hpp"

namespace tabforge {

namespace {

constexpr int kMaxExponent = 1000;

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::optional<Decimal> Decimal::parse(std::string_view text) {
  std::size_t i = 0;
  bool negative = false;
  if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
    negative = text[i] == '-';
    ++i;
  }
  std::string digits;
  std::size_t int_digits = 0;
  while (i < text.size() && is_digit(text[i])) {
    digits.push_back(text[i++]);
    ++int_digits;
  }
  std::size_t frac_digits = 0;
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() && is_digit(text[i])) {
      digits.push_back(text[i++]);
      ++frac_digits;
    }
  }
  if (int_digits + frac_digits == 0) return std::nullopt;

  long exponent = 0;
  if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
    ++i;
    bool exp_negative = false;
    if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
      exp_negative = text[i] == '-';
      ++i;
    }
    if (i >= text.size() || !is_digit(text[i])) return std::nullopt;
    while (i < text.size() && is_digit(text[i])) {
      exponent = exponent * 10 + (text[i++] - '0');
      if (exponent > kMaxExponent) return std::nullopt;
    }
    if (exp_negative) exponent = -exponent;
  }
  if (i != text.size()) return std::nullopt;

  Decimal d;
  d.negative_ = negative;
  long scale = static_cast<long>(frac_digits) - exponent;
  if (scale < 0) {
    digits.append(static_cast<std::size_t>(-scale), '0');
    scale = 0;
  }
  d.digits_ = std::move(digits);
  d.scale_ = static_cast<int>(scale);
  d.normalize();
  return d;
}

Decimal Decimal::from_double(double value) {
  if (!std::isfinite(value)) throw DomainError("non-finite numeric value");
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  auto parsed = parse(std::string_view(buf.data(), static_cast<std::size_t>(res.ptr - buf.data())));
  if (!parsed) throw DomainError("cannot represent double as decimal");
  return *parsed;
}

void Decimal::normalize() {
  // Drop trailing fractional zeros.
  while (scale_ > 0 && digits_.size() > 1 && digits_.back() == '0') {
    digits_.pop_back();
    --scale_;
  }
  if (scale_ > 0 && digits_ == "0") scale_ = 0;
  std::size_t lead = 0;
  while (lead + 1 < digits_.size() && digits_[lead] == '0') ++lead;
  digits_.erase(0, lead);
  if (digits_.empty()) digits_ = "0";
  if (digits_ == "0") {
    scale_ = 0;
    negative_ = false;
  }
}

Decimal Decimal::rounded(int places) const {
  if (scale_ <= places) return *this;
  const auto drop = static_cast<std::size_t>(scale_ - places);
  std::string padded = digits_;
  if (padded.size() < drop + 1) padded.insert(0, drop + 1 - padded.size(), '0');
  std::string kept = padded.substr(0, padded.size() - drop);
  const std::string_view dropped(padded.data() + kept.size(), drop);
  const char first = dropped.front();
  const bool rest_nonzero = dropped.substr(1).find_first_not_of('0') != std::string_view::npos;
  const bool last_odd = ((kept.back() - '0') % 2) == 1;
  const bool round_up = first > '5' || (first == '5' && (rest_nonzero || last_odd));
  if (round_up) {
    std::size_t pos = kept.size();
    while (pos > 0) {
      --pos;
      if (kept[pos] == '9') {
        kept[pos] = '0';
      } else {
        ++kept[pos];
        break;
      }
      if (pos == 0) kept.insert(kept.begin(), '1');
    }
  }
  Decimal out;
  out.negative_ = negative_;
  out.digits_ = std::move(kept);
  out.scale_ = places;
  out.normalize();
  return out;
}

std::string Decimal::to_string() const {
  std::string out;
  if (negative_) out.push_back('-');
  if (scale_ == 0) {
    out += digits_;
    return out;
  }
  const auto scale = static_cast<std::size_t>(scale_);
  if (digits_.size() <= scale) {
    out += "0.";
    out.append(scale - digits_.size(), '0');
    out += digits_;
  } else {
    out.append(digits_, 0, digits_.size() - scale);
    out.push_back('.');
    out.append(digits_, digits_.size() - scale, std::string::npos);
  }
  return out;
}

double Decimal::to_double() const { return std::strtod(to_string().c_str(), nullptr); }

std::string canonicalize_numeric(const Decimal& value) {
  return value.rounded(kNumericPrecision).to_string();
}

std::string canonicalize_numeric(double value) {
  return canonicalize_numeric(Decimal::from_double(value));
}

}  // namespace tabforge

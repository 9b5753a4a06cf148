#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "vibetune/error.hpp"

namespace vibetune {

/// Exact base-10 number: value = mantissa * 10^-scale.
///
/// Budget points are sums of products of decimal literals (elapsed seconds,
/// the point rate); binary floating point would drift. Multiplication adds
/// scales and never rounds. Values are kept normalized (no trailing zero
/// digits in the fraction) so equal values compare and print identically.
class Decimal {
 public:
  using Mantissa = __int128;

  constexpr Decimal() = default;
  constexpr Decimal(std::int64_t integer) : mantissa_(integer) {}  // NOLINT

  static Decimal from_parts(Mantissa mantissa, int scale) {
    Decimal d;
    d.mantissa_ = mantissa;
    d.scale_ = scale;
    d.normalize();
    return d;
  }

  /// Parses `[-+]digits[.digits]`; anything else throws InvalidDecimal.
  static Decimal parse(std::string_view text) {
    Decimal d;
    std::size_t i = 0;
    bool negative = false;
    if (i < text.size() && (text[i] == '-' || text[i] == '+')) {
      negative = text[i] == '-';
      ++i;
    }
    bool seen_digit = false;
    bool seen_point = false;
    for (; i < text.size(); ++i) {
      const char c = text[i];
      if (c == '.') {
        if (seen_point) throw Error(Errc::InvalidDecimal, std::string(text));
        seen_point = true;
        continue;
      }
      if (c < '0' || c > '9') throw Error(Errc::InvalidDecimal, std::string(text));
      seen_digit = true;
      d.mantissa_ = checked_mul(d.mantissa_, 10) + (c - '0');
      if (seen_point) ++d.scale_;
      if (d.scale_ > kMaxScale) throw Error(Errc::InvalidDecimal, std::string(text));
    }
    if (!seen_digit) throw Error(Errc::InvalidDecimal, std::string(text));
    if (negative) d.mantissa_ = -d.mantissa_;
    d.normalize();
    return d;
  }

  /// Rounds a binary double to `places` fractional digits (half away from zero).
  static Decimal from_double(double value, int places) {
    if (!std::isfinite(value)) throw Error(Errc::InvalidDecimal, "non-finite value");
    const double scaled = std::round(value * std::pow(10.0, places));
    if (std::fabs(scaled) > 9.0e18) throw Error(Errc::InvalidDecimal, "value out of range");
    return from_parts(static_cast<Mantissa>(static_cast<std::int64_t>(scaled)), places);
  }

  Mantissa mantissa() const { return mantissa_; }
  int scale() const { return scale_; }
  bool is_negative() const { return mantissa_ < 0; }
  bool is_zero() const { return mantissa_ == 0; }

  double to_double() const {
    return static_cast<double>(mantissa_) / std::pow(10.0, scale_);
  }

  std::string to_string() const {
    Mantissa m = mantissa_ < 0 ? -mantissa_ : mantissa_;
    std::string digits;
    do {
      digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(m % 10)));
      m /= 10;
    } while (m != 0);
    if (scale_ > 0) {
      if (static_cast<int>(digits.size()) <= scale_) {
        digits.insert(0, static_cast<std::size_t>(scale_ - static_cast<int>(digits.size()) + 1), '0');
      }
      digits.insert(digits.size() - static_cast<std::size_t>(scale_), ".");
    }
    return mantissa_ < 0 ? "-" + digits : digits;
  }

  friend Decimal operator+(const Decimal& a, const Decimal& b) {
    const int scale = a.scale_ > b.scale_ ? a.scale_ : b.scale_;
    Mantissa sum = 0;
    if (__builtin_add_overflow(a.rescaled(scale), b.rescaled(scale), &sum)) {
      throw Error(Errc::InvalidDecimal, "overflow in addition");
    }
    return from_parts(sum, scale);
  }
  friend Decimal operator-(const Decimal& a, const Decimal& b) { return a + (-b); }
  friend Decimal operator*(const Decimal& a, const Decimal& b) {
    if (a.scale_ + b.scale_ > kMaxScale) throw Error(Errc::InvalidDecimal, "scale overflow");
    return from_parts(checked_mul(a.mantissa_, b.mantissa_), a.scale_ + b.scale_);
  }
  Decimal operator-() const { return from_parts(-mantissa_, scale_); }
  Decimal& operator+=(const Decimal& other) { return *this = *this + other; }

  friend bool operator==(const Decimal& a, const Decimal& b) {
    return a.mantissa_ == b.mantissa_ && a.scale_ == b.scale_;
  }
  friend std::strong_ordering operator<=>(const Decimal& a, const Decimal& b) {
    const int scale = a.scale_ > b.scale_ ? a.scale_ : b.scale_;
    const Mantissa x = a.rescaled(scale);
    const Mantissa y = b.rescaled(scale);
    if (x < y) return std::strong_ordering::less;
    if (x > y) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }

 private:
  static constexpr int kMaxScale = 30;

  static Mantissa checked_mul(Mantissa a, Mantissa b) {
    Mantissa out = 0;
    if (__builtin_mul_overflow(a, b, &out)) throw Error(Errc::InvalidDecimal, "overflow");
    return out;
  }

  Mantissa rescaled(int scale) const {
    Mantissa m = mantissa_;
    for (int s = scale_; s < scale; ++s) m = checked_mul(m, 10);
    return m;
  }

  void normalize() {
    if (mantissa_ == 0) {
      scale_ = 0;
      return;
    }
    while (scale_ > 0 && mantissa_ % 10 == 0) {
      mantissa_ /= 10;
      --scale_;
    }
  }

  Mantissa mantissa_ = 0;
  int scale_ = 0;
};

}  // namespace vibetune

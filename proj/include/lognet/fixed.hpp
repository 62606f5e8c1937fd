#pragma once

// Fixed-point words used by the multiplier-free kernels.
//
// AccumulatorWord holds linear-domain values (weights held for Method 1,
// partial sums of dot products). ExponentWord holds log-domain values
// (per-term exponents w~ + x~ and the running log-domain sum).

#include <compare>
#include <cstdint>

namespace lognet {

/// Layout of a signed fixed-point word. Representable raw values are
/// [-2^(integer_bits + frac_bits), 2^(integer_bits + frac_bits) - 1].
struct FixedFormat {
  int integer_bits = 32;
  int frac_bits = 8;

  static constexpr int kMaxTotalBits = 62;

  int total_bits() const { return integer_bits + frac_bits; }
  void validate() const;
  bool operator==(const FixedFormat&) const = default;
};

class AccumulatorWord {
 public:
  AccumulatorWord() = default;
  explicit AccumulatorWord(FixedFormat fmt);

  static AccumulatorWord from_raw(std::int64_t raw, FixedFormat fmt);
  static AccumulatorWord from_int(std::int64_t value, FixedFormat fmt);
  /// Rounds to the nearest grid point (ties away from zero).
  static AccumulatorWord from_double(double value, FixedFormat fmt);
  static AccumulatorWord one(FixedFormat fmt) { return from_int(1, fmt); }

  std::int64_t raw() const { return raw_; }
  const FixedFormat& format() const { return fmt_; }
  double to_double() const;

  static std::int64_t max_raw(const FixedFormat& fmt);
  static std::int64_t min_raw(const FixedFormat& fmt) { return -max_raw(fmt) - 1; }

  AccumulatorWord operator+(const AccumulatorWord& other) const;
  AccumulatorWord operator-(const AccumulatorWord& other) const;
  AccumulatorWord operator-() const;
  AccumulatorWord& operator+=(const AccumulatorWord& other) { return *this = *this + other; }
  AccumulatorWord& operator-=(const AccumulatorWord& other) { return *this = *this - other; }

  bool operator==(const AccumulatorWord&) const = default;

 private:
  std::int64_t raw_ = 0;
  FixedFormat fmt_{};
};

/// Signed fixed-point exponent with `frac_bits` fractional bits.
class ExponentWord {
 public:
  static constexpr int kDefaultFracBits = 4;
  static constexpr int kMaxFracBits = 24;
  // |value| < 2^kIntegerRangeBits; comfortably covers +-2 * 2^max_bitwidth.
  static constexpr int kIntegerRangeBits = 30;

  ExponentWord() = default;

  static ExponentWord from_raw(std::int64_t raw, int frac_bits = kDefaultFracBits);
  static ExponentWord from_int(std::int64_t value, int frac_bits = kDefaultFracBits);
  /// Rounds to the nearest representable exponent (ties away from zero).
  static ExponentWord from_double(double value, int frac_bits = kDefaultFracBits);

  std::int64_t raw() const { return raw_; }
  int frac_bits() const { return frac_bits_; }
  /// floor(value): arithmetic right shift of the raw word.
  std::int64_t floor() const { return raw_ >> frac_bits_; }
  /// The fractional part as an unsigned frac_bits-bit field.
  std::int64_t frac_raw() const { return raw_ & ((std::int64_t{1} << frac_bits_) - 1); }
  bool is_integer() const { return frac_raw() == 0; }
  double to_double() const;

  ExponentWord operator+(const ExponentWord& other) const;
  ExponentWord operator-(const ExponentWord& other) const;
  ExponentWord operator-() const;
  ExponentWord abs() const { return raw_ < 0 ? -*this : *this; }
  /// Same value with the fraction dropped (toward -inf).
  ExponentWord floored() const { return from_int(floor(), frac_bits_); }

  bool operator==(const ExponentWord&) const = default;
  std::strong_ordering operator<=>(const ExponentWord& other) const;

 private:
  ExponentWord(std::int64_t raw, int frac_bits) : raw_(raw), frac_bits_(frac_bits) {}

  std::int64_t raw_ = 0;
  int frac_bits_ = kDefaultFracBits;
};

/// a * 2^b as a pure shift of the raw word. Right shifts drop bits (toward -inf).
/// Throws OverflowError when a left shift leaves the word's range.
AccumulatorWord bitshift(const AccumulatorWord& a, int b);

/// Raw-word shift shared by both word types; no range check.
std::int64_t shift_raw(std::int64_t raw, int b);

/// floor(log2 x) from the position of the most significant 1 bit.
int log2_floor(const AccumulatorWord& x);

/// floor(log2 x), plus one when the m bits after the leading 1, read as a
/// fraction F, satisfy F >= sqrt(2) - 1.
int log2_round(const AccumulatorWord& x, int m = 4);

/// Smallest m-bit integer T with T / 2^m >= sqrt(2) - 1.
std::int64_t sqrt2_minus_one_threshold(int m);

}  // namespace lognet

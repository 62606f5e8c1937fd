#include "lognet/fixed.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "lognet/errors.hpp"

namespace lognet {

void FixedFormat::validate() const {
  if (integer_bits < 0 || frac_bits < 0) {
    throw ConfigError("fixed-point format needs non-negative integer/fraction bits");
  }
  if (total_bits() < 1 || total_bits() > kMaxTotalBits) {
    throw ConfigError("fixed-point format must have 1.." + std::to_string(kMaxTotalBits) +
                      " magnitude bits, got " + std::to_string(total_bits()));
  }
}

std::int64_t AccumulatorWord::max_raw(const FixedFormat& fmt) {
  return (std::int64_t{1} << fmt.total_bits()) - 1;
}

namespace {

std::int64_t checked_raw(std::int64_t raw, const FixedFormat& fmt, const char* what) {
  if (raw > AccumulatorWord::max_raw(fmt) || raw < AccumulatorWord::min_raw(fmt)) {
    throw OverflowError(std::string("accumulator overflow in ") + what);
  }
  return raw;
}

}  // namespace

AccumulatorWord::AccumulatorWord(FixedFormat fmt) : fmt_(fmt) { fmt_.validate(); }

AccumulatorWord AccumulatorWord::from_raw(std::int64_t raw, FixedFormat fmt) {
  AccumulatorWord w(fmt);
  w.raw_ = checked_raw(raw, fmt, "from_raw");
  return w;
}

AccumulatorWord AccumulatorWord::from_int(std::int64_t value, FixedFormat fmt) {
  fmt.validate();
  const std::int64_t limit = std::int64_t{1} << fmt.integer_bits;
  if (value >= limit || value < -limit) throw OverflowError("accumulator overflow in from_int");
  return from_raw(value * (std::int64_t{1} << fmt.frac_bits), fmt);
}

AccumulatorWord AccumulatorWord::from_double(double value, FixedFormat fmt) {
  fmt.validate();
  if (!std::isfinite(value)) throw DomainError("cannot hold a non-finite value in a fixed-point word");
  const double scaled = std::round(std::ldexp(value, fmt.frac_bits));
  if (std::fabs(scaled) > std::ldexp(1.0, fmt.total_bits())) {
    throw OverflowError("accumulator overflow in from_double");
  }
  return from_raw(static_cast<std::int64_t>(scaled), fmt);
}

double AccumulatorWord::to_double() const {
  return std::ldexp(static_cast<double>(raw_), -fmt_.frac_bits);
}

AccumulatorWord AccumulatorWord::operator+(const AccumulatorWord& other) const {
  if (!(fmt_ == other.fmt_)) throw ConfigError("accumulator format mismatch");
  return from_raw(checked_raw(raw_ + other.raw_, fmt_, "add"), fmt_);
}

AccumulatorWord AccumulatorWord::operator-(const AccumulatorWord& other) const {
  if (!(fmt_ == other.fmt_)) throw ConfigError("accumulator format mismatch");
  return from_raw(checked_raw(raw_ - other.raw_, fmt_, "subtract"), fmt_);
}

AccumulatorWord AccumulatorWord::operator-() const { return from_raw(checked_raw(-raw_, fmt_, "negate"), fmt_); }

namespace {

std::int64_t checked_exponent(std::int64_t raw, int frac_bits) {
  const std::int64_t limit = std::int64_t{1} << (ExponentWord::kIntegerRangeBits + frac_bits);
  if (raw >= limit || raw <= -limit) throw OverflowError("exponent word overflow");
  return raw;
}

void check_frac_bits(int frac_bits) {
  if (frac_bits < 0 || frac_bits > ExponentWord::kMaxFracBits) {
    throw ConfigError("exponent fractional bits must be in [0, " +
                      std::to_string(ExponentWord::kMaxFracBits) + "]");
  }
}

}  // namespace

ExponentWord ExponentWord::from_raw(std::int64_t raw, int frac_bits) {
  check_frac_bits(frac_bits);
  return ExponentWord(checked_exponent(raw, frac_bits), frac_bits);
}

ExponentWord ExponentWord::from_int(std::int64_t value, int frac_bits) {
  check_frac_bits(frac_bits);
  if (value >= (std::int64_t{1} << kIntegerRangeBits) || value <= -(std::int64_t{1} << kIntegerRangeBits)) {
    throw OverflowError("exponent word overflow");
  }
  return ExponentWord(value * (std::int64_t{1} << frac_bits), frac_bits);
}

ExponentWord ExponentWord::from_double(double value, int frac_bits) {
  check_frac_bits(frac_bits);
  if (!std::isfinite(value)) throw DomainError("non-finite exponent");
  const double scaled = std::round(std::ldexp(value, frac_bits));
  if (std::fabs(scaled) >= std::ldexp(1.0, kIntegerRangeBits + frac_bits)) {
    throw OverflowError("exponent word overflow");
  }
  return ExponentWord(static_cast<std::int64_t>(scaled), frac_bits);
}

double ExponentWord::to_double() const { return std::ldexp(static_cast<double>(raw_), -frac_bits_); }

ExponentWord ExponentWord::operator+(const ExponentWord& other) const {
  if (frac_bits_ != other.frac_bits_) throw ConfigError("exponent word fractional widths differ");
  return ExponentWord(checked_exponent(raw_ + other.raw_, frac_bits_), frac_bits_);
}

ExponentWord ExponentWord::operator-(const ExponentWord& other) const {
  if (frac_bits_ != other.frac_bits_) throw ConfigError("exponent word fractional widths differ");
  return ExponentWord(checked_exponent(raw_ - other.raw_, frac_bits_), frac_bits_);
}

ExponentWord ExponentWord::operator-() const { return ExponentWord(-raw_, frac_bits_); }

std::strong_ordering ExponentWord::operator<=>(const ExponentWord& other) const {
  if (frac_bits_ != other.frac_bits_) throw ConfigError("exponent word fractional widths differ");
  return raw_ <=> other.raw_;
}

std::int64_t shift_raw(std::int64_t raw, int b) {
  if (b >= 0) {
    if (b >= 63) {
      if (raw == 0) return 0;
      throw OverflowError("shift by " + std::to_string(b) + " overflows a 64-bit word");
    }
    return static_cast<std::int64_t>(static_cast<std::uint64_t>(raw) << b);
  }
  if (b <= -63) return raw < 0 ? -1 : 0;
  return raw >> -b;
}

AccumulatorWord bitshift(const AccumulatorWord& a, int b) {
  const FixedFormat& fmt = a.format();
  if (b > 0) {
    const std::int64_t raw = a.raw();
    if (raw == 0) return a;
    const std::int64_t magnitude = raw < 0 ? -(raw + 1) : raw;
    if (b >= fmt.total_bits() || magnitude > (AccumulatorWord::max_raw(fmt) >> b)) {
      throw OverflowError("bitshift by " + std::to_string(b) + " overflows the accumulator word");
    }
    return AccumulatorWord::from_raw(shift_raw(raw, b), fmt);
  }
  return AccumulatorWord::from_raw(shift_raw(a.raw(), b), fmt);
}

int log2_floor(const AccumulatorWord& x) {
  if (x.raw() <= 0) throw DomainError("log2 of a non-positive value");
  const auto msb = std::bit_width(static_cast<std::uint64_t>(x.raw())) - 1;
  return static_cast<int>(msb) - x.format().frac_bits;
}

std::int64_t sqrt2_minus_one_threshold(int m) {
  if (m < 1 || m > 30) throw ConfigError("mantissa bits m must be in [1, 30]");
  // Smallest t with (t + 2^m)^2 >= 2 * 4^m, i.e. t/2^m >= sqrt(2) - 1, in exact integers.
  const std::int64_t scale = std::int64_t{1} << m;
  auto reaches = [&](std::int64_t t) {
    const auto v = static_cast<unsigned __int128>(t + scale);
    return v * v >= static_cast<unsigned __int128>(2) * scale * scale;
  };
  auto t = static_cast<std::int64_t>(std::floor((std::sqrt(2.0) - 1.0) * static_cast<double>(scale)));
  while (t > 0 && reaches(t - 1)) --t;
  while (!reaches(t)) ++t;
  return t;
}

int log2_round(const AccumulatorWord& x, int m) {
  const int floor_log = log2_floor(x);
  const auto raw = static_cast<std::uint64_t>(x.raw());
  const int msb = static_cast<int>(std::bit_width(raw)) - 1;
  const std::uint64_t mask = (std::uint64_t{1} << m) - 1;
  const std::uint64_t fraction = msb >= m ? (raw >> (msb - m)) & mask : (raw << (m - msb)) & mask;
  return floor_log + (static_cast<std::int64_t>(fraction) >= sqrt2_minus_one_threshold(m) ? 1 : 0);
}

}  // namespace lognet

#pragma once

// Log-domain codes, the LogQuant / LinearQuant quantizers and the
// multiplier-free dot-product kernels built on them.
//
// Code layout (log kind): a magnitude field of M = bitwidth - signed bits.
// Code 0 is the reserved zero. Code c in [1, 2^M - 1] stands for the exponent
//   e(c) = FSR - (2^M - c) * step,    step = 2^-base_frac_bits,
// so the representable exponents are FSR - (2^M - 1) * step ... FSR - step.
// Exponents rounding at or below FSR - 2^M * step flush to the zero code;
// exponents at or above FSR clip to FSR - step.
//
// Linear kind: code = Round(|x| / step) clipped to [0, 2^M - 1], step = 2^(FSR - M).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lognet/fixed.hpp"

namespace lognet {

enum class QuantKind : std::uint8_t { log = 1, linear = 2 };

enum class Rounding : std::uint8_t {
  floor_msb = 0,            // floor(log2 |x|): position of the leading 1
  round_nearest_sqrt2 = 1,  // round up when the mantissa fraction F >= sqrt(2) - 1
};

struct QuantizerConfig {
  QuantKind kind = QuantKind::log;
  int bitwidth = 4;  // total bits including the sign bit when is_signed
  bool is_signed = false;
  int fsr = 0;             // full scale is 2^fsr in the linear domain
  int base_frac_bits = 0;  // 0: base 2, 1: base sqrt(2)
  Rounding rounding = Rounding::round_nearest_sqrt2;

  int magnitude_bits() const { return bitwidth - (is_signed ? 1 : 0); }
  /// Number of non-zero magnitude codes, 2^M - 1.
  std::int64_t levels() const { return (std::int64_t{1} << magnitude_bits()) - 1; }
  /// Exponent grid units per octave (1 for base 2, 2 for base sqrt 2).
  int grid_per_octave() const { return 1 << base_frac_bits; }
  /// Largest representable exponent, in grid units: FSR * 2^bf - 1.
  std::int64_t top_exponent_units() const;
  /// Smallest non-zero representable exponent, in grid units.
  std::int64_t bottom_exponent_units() const { return top_exponent_units() - levels() + 1; }
  /// Linear quantizer step, 2^(FSR - M).
  double linear_step() const;

  void validate() const;
  std::string describe() const;
  bool operator==(const QuantizerConfig&) const = default;
};

QuantizerConfig log_config(int bitwidth, bool is_signed, int fsr, int base_frac_bits = 0,
                           Rounding rounding = Rounding::round_nearest_sqrt2);
QuantizerConfig linear_config(int bitwidth, bool is_signed, int fsr);

/// Sign + magnitude code. For the linear kind `code` is the step count.
struct LogCode {
  std::int8_t sign = 1;
  std::uint16_t code = 0;
  bool is_zero = true;

  static LogCode zero() { return {}; }
  static LogCode make(int sign, std::uint16_t code);

  bool is_negative() const { return sign < 0; }
  bool operator==(const LogCode&) const = default;
};

/// Quantized real: the code plus its dequantized value.
struct QuantizedValue {
  LogCode code;
  double value = 0.0;
};

/// LogQuant: sign(x) * 2^clip(Round(log_B |x|)).
LogCode logquant(double x, const QuantizerConfig& cfg);

/// LinearQuant: Round(x / step) * step, clipped to (2^M - 1) * step.
QuantizedValue linquant(double x, const QuantizerConfig& cfg);

/// Dispatches on cfg.kind.
LogCode quantize(double x, const QuantizerConfig& cfg);

/// Exact value of a code: 0, +-2^e (base 2), +-2^e with a correctly rounded
/// 2^(1/2) factor for odd base-sqrt2 exponents, or +-code * step (linear).
double dequantize(const LogCode& c, const QuantizerConfig& cfg);

/// Convenience: dequantize(quantize(x)).
double quantize_value(double x, const QuantizerConfig& cfg);

/// Exponent of a non-zero log code in grid units (1 or 1/2 octave).
std::int64_t code_exponent_units(const LogCode& c, const QuantizerConfig& cfg);

/// Exponent of a non-zero log code as an ExponentWord with `frac_bits`
/// fractional bits (frac_bits >= cfg.base_frac_bits).
ExponentWord code_exponent(const LogCode& c, const QuantizerConfig& cfg,
                           int frac_bits = ExponentWord::kDefaultFracBits);

/// Throws unless `c` is a valid code for `cfg`.
void check_code(const LogCode& c, const QuantizerConfig& cfg);

/// a * 2^floor(e) * (1 + frac(e)), the multiplier-free stand-in for a * 2^e:
/// one shift by floor(e) and one shift-add per set fraction bit.
AccumulatorWord scale_by_exponent(const AccumulatorWord& a, const ExponentWord& e);

/// 2^e ~ 2^floor(e) * (1 + frac(e)) in the given accumulator format.
AccumulatorWord shift_mul_halfexp(const ExponentWord& e, FixedFormat fmt = {});

/// Method 1: sum_i Bitshift(w_i, x~_i) with weights held as fixed-point words.
AccumulatorWord dot_method1(std::span<const AccumulatorWord> w, std::span<const LogCode> x_codes,
                            const QuantizerConfig& cfg_x);

/// Method 1 from real weights: each weight is first rounded into `fmt`.
AccumulatorWord dot_method1(std::span<const double> w, std::span<const LogCode> x_codes,
                            const QuantizerConfig& cfg_x, FixedFormat fmt = {});

enum class AccumMode : std::uint8_t { linear = 0, log = 1 };

/// Method 2: sum_i sign_i * Bitshift(1, w~_i + x~_i). In log mode the positive
/// and negative terms are each summed in the log domain and subtracted at the end.
AccumulatorWord dot_method2(std::span<const LogCode> w_codes, std::span<const LogCode> x_codes,
                            const QuantizerConfig& cfg_w, const QuantizerConfig& cfg_x,
                            AccumMode mode = AccumMode::linear, FixedFormat fmt = {},
                            int exponent_frac_bits = ExponentWord::kDefaultFracBits);

/// Log-domain running sum approximating log2(sum_i 2^p_i):
///   s_2 = max(p1, p2) + Bitshift(1, -|p1 - p2|)
///   s_n = max(s_{n-1}, p_n) + Bitshift(1, -|floor(s_{n-1}) - p_n|)
ExponentWord log_accumulate(std::span<const ExponentWord> p);

/// 2^-d for d >= 0 as a shift of 1 in the exponent word's own format.
ExponentWord exponent_bitshift_one(const ExponentWord& neg_distance);

}  // namespace lognet

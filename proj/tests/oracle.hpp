#pragma once

// High-precision reference evaluations (MPFR, 256-bit) used as independent
// oracles by the unit tests and the acceptance binary. Nothing here calls the
// library's quantizers or kernels.

#include <cstdint>
#include <span>

#include "lognet/lognum.hpp"

namespace oracle {

/// floor and round-to-nearest of log_B |x| on the exponent grid (B = 2 or sqrt 2).
struct LogGrid {
  std::int64_t floor_units = 0;
  std::int64_t nearest_units = 0;
};
LogGrid log_grid(double x, int base_frac_bits);

/// 2^(units / 2^bf), correctly rounded (|units| <= 4096).
double pow2_units(std::int64_t units, int base_frac_bits);

/// LogQuant of x from a precomputed grid position: clip at the top, flush to
/// zero at or below FSR - 2^M * step, value sign * 2^(units / 2^bf).
double logquant_from_grid(double x, const LogGrid& g, const lognet::QuantizerConfig& cfg);
double logquant(double x, const lognet::QuantizerConfig& cfg);

/// LinearQuant: Round(|x| / 2^(FSR - M)) (ties away from zero), clamped to 2^M - 1.
double linquant(double x, const lognet::QuantizerConfig& cfg);

/// log2(sum_i 2^p_i), correctly rounded to double.
double log2_sum(std::span<const double> p);
double log2(double x);
/// 2^e correctly rounded to double.
double exp2(double e);

/// Exact sum of products, correctly rounded to double.
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace oracle

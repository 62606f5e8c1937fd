#include "lognet/lognum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lognet/errors.hpp"

namespace lognet {

namespace {

constexpr int kMaxBitwidth = 16;
constexpr int kMaxAbsFsr = 4096;

// Smallest double that is >= t, where t approximates an irrational constant to
// long double precision. Used so that `m >= threshold` on a double mantissa m
// decides m >= 2^(q/4) exactly.
double smallest_double_at_least(long double t) {
  double d = static_cast<double>(t);
  if (static_cast<long double>(d) < t) {
    d = std::nextafter(d, std::numeric_limits<double>::infinity());
  } else {
    const double lower = std::nextafter(d, 0.0);
    if (static_cast<long double>(lower) >= t) d = lower;
  }
  return d;
}

struct MantissaThresholds {
  double quarter = smallest_double_at_least(std::exp2l(0.25L));
  double half = smallest_double_at_least(std::sqrt(2.0L));
  double three_quarter = smallest_double_at_least(std::exp2l(0.75L));
};

const MantissaThresholds& thresholds() {
  static const MantissaThresholds t;
  return t;
}

// |x| = m * 2^k with m in [1, 2).
void split(double ax, double& m, std::int64_t& k) {
  int e = 0;
  m = std::frexp(ax, &e) * 2.0;
  k = e - 1;
}

// Round(log_B |x|) in grid units for x != 0.
std::int64_t rounded_exponent_units(double ax, const QuantizerConfig& cfg) {
  double m = 0.0;
  std::int64_t k = 0;
  split(ax, m, k);
  const auto& t = thresholds();
  if (cfg.base_frac_bits == 0) {
    if (cfg.rounding == Rounding::floor_msb) return k;
    return k + (m >= t.half ? 1 : 0);
  }
  if (cfg.rounding == Rounding::floor_msb) return 2 * k + (m >= t.half ? 1 : 0);
  return 2 * k + (m >= t.quarter ? 1 : 0) + (m >= t.three_quarter ? 1 : 0);
}

void require_log(const QuantizerConfig& cfg, const char* op) {
  cfg.validate();
  if (cfg.kind != QuantKind::log) throw ConfigError(std::string(op) + " needs a log quantizer");
}

}  // namespace

std::int64_t QuantizerConfig::top_exponent_units() const {
  return static_cast<std::int64_t>(fsr) * grid_per_octave() - 1;
}

double QuantizerConfig::linear_step() const { return std::ldexp(1.0, fsr - magnitude_bits()); }

void QuantizerConfig::validate() const {
  if (kind != QuantKind::log && kind != QuantKind::linear) throw ConfigError("unknown quantizer kind");
  if (is_signed ? bitwidth < 2 : bitwidth < 1) {
    throw ConfigError("bitwidth " + std::to_string(bitwidth) + " too small for a " +
                      (is_signed ? "signed" : "unsigned") + " quantizer");
  }
  if (bitwidth > kMaxBitwidth) throw ConfigError("bitwidth above " + std::to_string(kMaxBitwidth));
  if (base_frac_bits != 0 && base_frac_bits != 1) {
    throw ConfigError("base_frac_bits must be 0 (base 2) or 1 (base sqrt2)");
  }
  if (fsr > kMaxAbsFsr || fsr < -kMaxAbsFsr) throw ConfigError("fsr out of range");
  if (rounding != Rounding::floor_msb && rounding != Rounding::round_nearest_sqrt2) {
    throw ConfigError("unknown rounding mode");
  }
}

std::string QuantizerConfig::describe() const {
  std::ostringstream os;
  os << (kind == QuantKind::log ? "log" : "linear") << bitwidth << (is_signed ? "s" : "u") << "(fsr=" << fsr;
  if (kind == QuantKind::log) {
    os << (base_frac_bits ? ",base=sqrt2" : ",base=2")
       << (rounding == Rounding::floor_msb ? ",floor" : ",nearest");
  }
  os << ")";
  return os.str();
}

QuantizerConfig log_config(int bitwidth, bool is_signed, int fsr, int base_frac_bits, Rounding rounding) {
  QuantizerConfig cfg{QuantKind::log, bitwidth, is_signed, fsr, base_frac_bits, rounding};
  cfg.validate();
  return cfg;
}

QuantizerConfig linear_config(int bitwidth, bool is_signed, int fsr) {
  QuantizerConfig cfg{QuantKind::linear, bitwidth, is_signed, fsr, 0, Rounding::round_nearest_sqrt2};
  cfg.validate();
  return cfg;
}

LogCode LogCode::make(int sign, std::uint16_t code) {
  if (code == 0) return zero();
  return LogCode{static_cast<std::int8_t>(sign < 0 ? -1 : 1), code, false};
}

void check_code(const LogCode& c, const QuantizerConfig& cfg) {
  if (c.is_zero) {
    if (c.code != 0 || c.sign != 1) throw DomainError("malformed zero code");
    return;
  }
  if (c.code == 0 || c.code > cfg.levels()) {
    throw DomainError("code " + std::to_string(c.code) + " does not fit " + cfg.describe());
  }
  if (c.sign != 1 && c.sign != -1) throw DomainError("code sign must be +1 or -1");
  if (c.sign < 0 && !cfg.is_signed) throw DomainError("negative code for an unsigned quantizer");
}

LogCode logquant(double x, const QuantizerConfig& cfg) {
  require_log(cfg, "logquant");
  if (std::isnan(x) || std::isinf(x)) throw DomainError("logquant of a non-finite value");
  if (x < 0 && !cfg.is_signed) throw DomainError("negative input to an unsigned quantizer");
  if (x == 0) return LogCode::zero();

  std::int64_t e = rounded_exponent_units(std::fabs(x), cfg);
  const std::int64_t top = cfg.top_exponent_units();
  const std::int64_t zero_floor = top + 1 - (std::int64_t{1} << cfg.magnitude_bits());
  if (e > top) e = top;
  if (e <= zero_floor) return LogCode::zero();
  return LogCode::make(x < 0 ? -1 : 1, static_cast<std::uint16_t>(e - zero_floor));
}

QuantizedValue linquant(double x, const QuantizerConfig& cfg) {
  cfg.validate();
  if (cfg.kind != QuantKind::linear) throw ConfigError("linquant needs a linear quantizer");
  if (std::isnan(x) || std::isinf(x)) throw DomainError("linquant of a non-finite value");
  if (x < 0 && !cfg.is_signed) throw DomainError("negative input to an unsigned quantizer");

  const double steps = std::round(std::ldexp(std::fabs(x), cfg.magnitude_bits() - cfg.fsr));
  const double clipped = std::min(steps, static_cast<double>(cfg.levels()));
  const LogCode code = LogCode::make(x < 0 ? -1 : 1, static_cast<std::uint16_t>(clipped));
  return {code, dequantize(code, cfg)};
}

LogCode quantize(double x, const QuantizerConfig& cfg) {
  return cfg.kind == QuantKind::log ? logquant(x, cfg) : linquant(x, cfg).code;
}

std::int64_t code_exponent_units(const LogCode& c, const QuantizerConfig& cfg) {
  if (c.is_zero) throw DomainError("the zero code has no exponent");
  return cfg.top_exponent_units() + 1 - (std::int64_t{1} << cfg.magnitude_bits()) + c.code;
}

double dequantize(const LogCode& c, const QuantizerConfig& cfg) {
  if (c.is_zero) return 0.0;
  double magnitude = 0.0;
  if (cfg.kind == QuantKind::linear) {
    magnitude = std::ldexp(static_cast<double>(c.code), cfg.fsr - cfg.magnitude_bits());
  } else {
    const std::int64_t e = code_exponent_units(c, cfg);
    if (cfg.base_frac_bits == 0) {
      magnitude = std::ldexp(1.0, static_cast<int>(e));
    } else {
      const int octave = static_cast<int>(e >> 1);
      magnitude = (e & 1) ? std::ldexp(1.4142135623730951, octave) : std::ldexp(1.0, octave);
    }
  }
  return c.sign < 0 ? -magnitude : magnitude;
}

double quantize_value(double x, const QuantizerConfig& cfg) { return dequantize(quantize(x, cfg), cfg); }

ExponentWord code_exponent(const LogCode& c, const QuantizerConfig& cfg, int frac_bits) {
  if (frac_bits < cfg.base_frac_bits) throw ConfigError("exponent word too narrow for the code grid");
  return ExponentWord::from_raw(code_exponent_units(c, cfg) * (std::int64_t{1} << (frac_bits - cfg.base_frac_bits)),
                                frac_bits);
}

AccumulatorWord scale_by_exponent(const AccumulatorWord& a, const ExponentWord& e) {
  const std::int64_t fl = e.floor();
  const int shift = static_cast<int>(std::clamp<std::int64_t>(fl, -64, 64));
  const AccumulatorWord base = bitshift(a, shift);
  AccumulatorWord result = base;
  const int f = e.frac_bits();
  const std::int64_t frac = e.frac_raw();
  for (int j = 1; j <= f; ++j) {
    if (frac & (std::int64_t{1} << (f - j))) result += bitshift(base, -j);
  }
  return result;
}

AccumulatorWord shift_mul_halfexp(const ExponentWord& e, FixedFormat fmt) {
  return scale_by_exponent(AccumulatorWord::one(fmt), e);
}

AccumulatorWord dot_method1(std::span<const AccumulatorWord> w, std::span<const LogCode> x_codes,
                            const QuantizerConfig& cfg_x) {
  require_log(cfg_x, "dot_method1");
  if (w.size() != x_codes.size()) throw ShapeError("dot_method1: operand lengths differ");
  if (w.empty()) return AccumulatorWord{};
  AccumulatorWord acc(w.front().format());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const LogCode& x = x_codes[i];
    check_code(x, cfg_x);
    if (x.is_zero) continue;
    const AccumulatorWord term = scale_by_exponent(w[i], code_exponent(x, cfg_x));
    acc += x.is_negative() ? -term : term;
  }
  return acc;
}

AccumulatorWord dot_method1(std::span<const double> w, std::span<const LogCode> x_codes,
                            const QuantizerConfig& cfg_x, FixedFormat fmt) {
  std::vector<AccumulatorWord> words;
  words.reserve(w.size());
  for (double v : w) words.push_back(AccumulatorWord::from_double(v, fmt));
  if (words.empty()) return AccumulatorWord(fmt);
  return dot_method1(words, x_codes, cfg_x);
}

ExponentWord exponent_bitshift_one(const ExponentWord& neg_distance) {
  if (neg_distance.raw() > 0) throw DomainError("exponent_bitshift_one expects a non-positive shift");
  const int f = neg_distance.frac_bits();
  const std::int64_t fl = neg_distance.floor();
  const std::int64_t base = shift_raw(std::int64_t{1} << f, static_cast<int>(std::max<std::int64_t>(fl, -64)));
  std::int64_t result = base;
  const std::int64_t frac = neg_distance.frac_raw();
  for (int j = 1; j <= f; ++j) {
    if (frac & (std::int64_t{1} << (f - j))) result += shift_raw(base, -j);
  }
  return ExponentWord::from_raw(result, f);
}

ExponentWord log_accumulate(std::span<const ExponentWord> p) {
  if (p.empty()) throw DomainError("log_accumulate of an empty sequence");
  ExponentWord s = p.front();
  for (std::size_t n = 1; n < p.size(); ++n) {
    const ExponentWord& term = p[n];
    const ExponentWord anchor = n == 1 ? s : s.floored();
    const ExponentWord distance = (anchor - term).abs();
    const ExponentWord larger = term > s ? term : s;
    s = larger + exponent_bitshift_one(-distance);
  }
  return s;
}

AccumulatorWord dot_method2(std::span<const LogCode> w_codes, std::span<const LogCode> x_codes,
                            const QuantizerConfig& cfg_w, const QuantizerConfig& cfg_x, AccumMode mode,
                            FixedFormat fmt, int exponent_frac_bits) {
  require_log(cfg_w, "dot_method2");
  require_log(cfg_x, "dot_method2");
  fmt.validate();
  if (w_codes.size() != x_codes.size()) throw ShapeError("dot_method2: operand lengths differ");
  if (exponent_frac_bits < std::max(cfg_w.base_frac_bits, cfg_x.base_frac_bits)) {
    throw ConfigError("exponent word too narrow to align the operand grids");
  }

  AccumulatorWord acc(fmt);
  std::vector<ExponentWord> positive;
  std::vector<ExponentWord> negative;
  for (std::size_t i = 0; i < w_codes.size(); ++i) {
    const LogCode& w = w_codes[i];
    const LogCode& x = x_codes[i];
    check_code(w, cfg_w);
    check_code(x, cfg_x);
    if (w.is_zero || x.is_zero) continue;
    const ExponentWord p =
        code_exponent(w, cfg_w, exponent_frac_bits) + code_exponent(x, cfg_x, exponent_frac_bits);
    const bool negative_term = (w.sign * x.sign) < 0;
    if (mode == AccumMode::linear) {
      const AccumulatorWord term = shift_mul_halfexp(p, fmt);
      acc += negative_term ? -term : term;
    } else {
      (negative_term ? negative : positive).push_back(p);
    }
  }
  if (mode == AccumMode::log) {
    if (!positive.empty()) acc += shift_mul_halfexp(log_accumulate(positive), fmt);
    if (!negative.empty()) acc -= shift_mul_halfexp(log_accumulate(negative), fmt);
  }
  return acc;
}

}  // namespace lognet

#include "lognet/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "lognet/errors.hpp"
#include "lognet/parallel.hpp"

namespace lognet {

Operand Operand::real(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw ShapeError("operand payload does not match its dimensions");
  Operand op;
  op.rows = rows;
  op.cols = cols;
  op.values = std::move(values);
  return op;
}

Operand Operand::coded(std::size_t rows, std::size_t cols, std::vector<LogCode> codes, const QuantizerConfig& cfg) {
  if (codes.size() != rows * cols) throw ShapeError("operand payload does not match its dimensions");
  Operand op;
  op.rows = rows;
  op.cols = cols;
  op.values.reserve(codes.size());
  for (const LogCode& c : codes) op.values.push_back(dequantize(c, cfg));
  op.codes = std::move(codes);
  op.cfg = cfg;
  return op;
}

Operand Operand::quantized(std::size_t rows, std::size_t cols, const std::vector<double>& values,
                           const QuantizerConfig& cfg) {
  std::vector<LogCode> codes;
  codes.reserve(values.size());
  for (double v : values) codes.push_back(quantize(v, cfg));
  return coded(rows, cols, std::move(codes), cfg);
}

Operand Operand::transposed() const {
  Operand t;
  t.rows = cols;
  t.cols = rows;
  t.cfg = cfg;
  t.values.resize(values.size());
  if (!codes.empty()) t.codes.resize(codes.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      t.values[c * rows + r] = values[r * cols + c];
      if (!codes.empty()) t.codes[c * rows + r] = codes[r * cols + c];
    }
  }
  return t;
}

KernelPath select_path(const Operand& a, const Operand& bt) {
  if (a.is_log_coded() && bt.is_log_coded()) return KernelPath::method2;
  if (a.is_log_coded() && !bt.is_coded()) return KernelPath::method1;
  if (bt.is_log_coded() && !a.is_coded()) return KernelPath::method1;
  return KernelPath::floating;
}

namespace {

int ceil_log2(std::size_t n) { return n <= 1 ? 0 : static_cast<int>(std::bit_width(n - 1)); }

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

FixedFormat capped_format(std::int64_t integer_bits, std::int64_t frac_bits) {
  integer_bits = std::max<std::int64_t>(1, integer_bits);
  if (integer_bits > FixedFormat::kMaxTotalBits) {
    throw OverflowError("products exceed the widest accumulator word");
  }
  frac_bits = std::clamp<std::int64_t>(frac_bits, 0, FixedFormat::kMaxTotalBits - integer_bits);
  return FixedFormat{static_cast<int>(integer_bits), static_cast<int>(frac_bits)};
}

// Left shifts are range checked exactly as bitshift() does.
inline std::int64_t checked_shift(std::int64_t raw, int b, std::int64_t max_raw, int total_bits) {
  if (b > 0) {
    if (raw == 0) return 0;
    const std::int64_t magnitude = raw < 0 ? -(raw + 1) : raw;
    if (b >= total_bits || magnitude > (max_raw >> b)) throw OverflowError("bitshift overflows the accumulator word");
    return static_cast<std::int64_t>(static_cast<std::uint64_t>(raw) << b);
  }
  return shift_raw(raw, b);
}

inline void checked_add(std::int64_t& acc, std::int64_t term, std::int64_t max_raw) {
  acc += term;
  if (acc > max_raw || acc < -max_raw - 1) throw OverflowError("accumulator overflow in dot product");
}

std::vector<double> gemm_float(const Operand& a, const Operand& bt) {
  const std::size_t m = a.rows, n = bt.rows, k = a.cols;
  std::vector<double> out(m * n, 0.0);
  parallel_for(m, [&](std::size_t i) {
    const double* ar = a.values.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = bt.values.data() + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += ar[t] * br[t];
      out[i * n + j] = acc;
    }
  });
  return out;
}

struct DecodedExponents {
  std::vector<std::int32_t> exponent;  // common grid units
  std::vector<std::int8_t> sign;       // 0 for the zero code
};

DecodedExponents decode(const Operand& op, int common_frac) {
  DecodedExponents d;
  d.exponent.resize(op.codes.size());
  d.sign.resize(op.codes.size());
  const int shift = common_frac - op.cfg->base_frac_bits;
  for (std::size_t i = 0; i < op.codes.size(); ++i) {
    const LogCode& c = op.codes[i];
    if (c.is_zero) continue;
    d.exponent[i] = static_cast<std::int32_t>(code_exponent_units(c, *op.cfg) * (std::int64_t{1} << shift));
    d.sign[i] = c.sign;
  }
  return d;
}

std::vector<double> gemm_method2(const Operand& a, const Operand& bt, const KernelOptions& opts) {
  const QuantizerConfig& ca = *a.cfg;
  const QuantizerConfig& cb = *bt.cfg;
  const std::size_t m = a.rows, n = bt.rows, k = a.cols;
  const FixedFormat fmt = opts.format.value_or(method2_format(ca, cb, k));
  fmt.validate();
  const int f = opts.exponent_frac_bits;
  const int common = std::max(ca.base_frac_bits, cb.base_frac_bits);
  if (f < common) throw ConfigError("exponent word too narrow to align the operand grids");

  std::vector<double> out(m * n, 0.0);
  if (opts.accum == AccumMode::log) {
    parallel_for(m, [&](std::size_t i) {
      const std::span<const LogCode> ar(a.codes.data() + i * k, k);
      for (std::size_t j = 0; j < n; ++j) {
        const std::span<const LogCode> br(bt.codes.data() + j * k, k);
        out[i * n + j] = dot_method2(ar, br, ca, cb, AccumMode::log, fmt, f).to_double();
      }
    });
    return out;
  }

  // Bitshift(1, p) for every reachable exponent sum p, computed once with the
  // same shift_mul_halfexp used by the scalar kernel.
  const int sa = common - ca.base_frac_bits;
  const int sb = common - cb.base_frac_bits;
  const std::int64_t lo = (ca.bottom_exponent_units() << sa) + (cb.bottom_exponent_units() << sb);
  const std::int64_t hi = (ca.top_exponent_units() << sa) + (cb.top_exponent_units() << sb);
  std::vector<std::int64_t> table(static_cast<std::size_t>(hi - lo + 1));
  std::vector<std::uint8_t> overflows(table.size(), 0);
  for (std::int64_t p = lo; p <= hi; ++p) {
    const auto idx = static_cast<std::size_t>(p - lo);
    try {
      table[idx] = shift_mul_halfexp(ExponentWord::from_raw(p << (f - common), f), fmt).raw();
    } catch (const OverflowError&) {
      overflows[idx] = 1;
    }
  }

  const DecodedExponents da = decode(a, common);
  const DecodedExponents db = decode(bt, common);
  const std::int64_t max_raw = AccumulatorWord::max_raw(fmt);
  const double scale = std::ldexp(1.0, -fmt.frac_bits);
  parallel_for(m, [&](std::size_t i) {
    const std::int32_t* ea = da.exponent.data() + i * k;
    const std::int8_t* sa_row = da.sign.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const std::int32_t* eb = db.exponent.data() + j * k;
      const std::int8_t* sb_row = db.sign.data() + j * k;
      std::int64_t acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        const int s = sa_row[t] * sb_row[t];
        if (s == 0) continue;
        const auto idx = static_cast<std::size_t>(ea[t] + eb[t] - lo);
        if (overflows[idx]) throw OverflowError("bitshift overflows the accumulator word");
        checked_add(acc, s > 0 ? table[idx] : -table[idx], max_raw);
      }
      out[i * n + j] = static_cast<double>(acc) * scale;
    }
  });
  return out;
}

std::vector<double> gemm_method1(const Operand& a, const Operand& bt, const KernelOptions& opts) {
  const bool coded_is_a = a.is_log_coded();
  const Operand& coded = coded_is_a ? a : bt;
  const Operand& real = coded_is_a ? bt : a;
  const QuantizerConfig& cfg = *coded.cfg;
  const std::size_t m = a.rows, n = bt.rows, k = a.cols;

  double max_abs = 0.0;
  for (double v : real.values) max_abs = std::max(max_abs, std::fabs(v));
  const FixedFormat fmt = opts.format.value_or(method1_format(max_abs, cfg, k));
  fmt.validate();

  std::vector<std::int64_t> real_raw(real.values.size());
  for (std::size_t i = 0; i < real.values.size(); ++i) {
    real_raw[i] = AccumulatorWord::from_double(real.values[i], fmt).raw();
  }
  // Exponent of each code as (floor, half): 2^e = 2^floor * (1 + half/2).
  std::vector<std::int32_t> floor_exp(coded.codes.size());
  std::vector<std::int8_t> half(coded.codes.size());
  std::vector<std::int8_t> sign(coded.codes.size());
  for (std::size_t i = 0; i < coded.codes.size(); ++i) {
    const LogCode& c = coded.codes[i];
    if (c.is_zero) continue;
    const std::int64_t e = code_exponent_units(c, cfg);
    floor_exp[i] = static_cast<std::int32_t>(e >> cfg.base_frac_bits);
    half[i] = static_cast<std::int8_t>(cfg.base_frac_bits ? (e & 1) : 0);
    sign[i] = c.sign;
  }

  const std::int64_t max_raw = AccumulatorWord::max_raw(fmt);
  const int total = fmt.total_bits();
  const double scale = std::ldexp(1.0, -fmt.frac_bits);
  std::vector<double> out(m * n, 0.0);
  parallel_for(m, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t coded_row = coded_is_a ? i : j;
      const std::size_t real_row = coded_is_a ? j : i;
      const std::int32_t* fe = floor_exp.data() + coded_row * k;
      const std::int8_t* hf = half.data() + coded_row * k;
      const std::int8_t* sg = sign.data() + coded_row * k;
      const std::int64_t* w = real_raw.data() + real_row * k;
      std::int64_t acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        if (sg[t] == 0) continue;
        const int b = std::clamp(fe[t], -64, 64);
        const std::int64_t base = checked_shift(w[t], b, max_raw, total);
        std::int64_t term = base;
        if (hf[t]) checked_add(term, shift_raw(base, -1), max_raw);
        if (sg[t] < 0) {
          if (term == -max_raw - 1) throw OverflowError("accumulator overflow in negate");
          term = -term;
        }
        checked_add(acc, term, max_raw);
      }
      out[i * n + j] = static_cast<double>(acc) * scale;
    }
  });
  return out;
}

}  // namespace

FixedFormat method2_format(const QuantizerConfig& a, const QuantizerConfig& b, std::size_t terms) {
  const int common = std::max(a.base_frac_bits, b.base_frac_bits);
  const std::int64_t lo = (a.bottom_exponent_units() << (common - a.base_frac_bits)) +
                          (b.bottom_exponent_units() << (common - b.base_frac_bits));
  const std::int64_t hi = (a.top_exponent_units() << (common - a.base_frac_bits)) +
                          (b.top_exponent_units() << (common - b.base_frac_bits));
  const std::int64_t per_octave = std::int64_t{1} << common;
  const std::int64_t lo_octave = floor_div(lo, per_octave);
  const std::int64_t hi_octave = floor_div(hi, per_octave);
  return capped_format(hi_octave + 2 + ceil_log2(terms), std::max<std::int64_t>(0, -lo_octave) + common);
}

FixedFormat method1_format(double max_abs_real, const QuantizerConfig& coded, std::size_t terms) {
  int real_octave = 0;
  if (max_abs_real > 0.0) std::frexp(max_abs_real, &real_octave);  // max_abs < 2^real_octave
  const std::int64_t hi_octave = floor_div(coded.top_exponent_units(), std::int64_t{1} << coded.base_frac_bits);
  // The real operand is held unshifted before each Bitshift, so it must fit too.
  const std::int64_t integer_bits =
      std::max<std::int64_t>(real_octave + 1, real_octave + hi_octave + 2 + ceil_log2(terms));
  return capped_format(integer_bits, FixedFormat::kMaxTotalBits);
}

std::vector<double> gemm_nt(const Operand& a, const Operand& bt, const KernelOptions& opts) {
  if (a.cols != bt.cols) throw ShapeError("gemm_nt: inner dimensions differ");
  switch (select_path(a, bt)) {
    case KernelPath::method2:
      return gemm_method2(a, bt, opts);
    case KernelPath::method1:
      return gemm_method1(a, bt, opts);
    case KernelPath::floating:
      break;
  }
  return gemm_float(a, bt);
}

}  // namespace lognet

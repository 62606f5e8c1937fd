#pragma once

// Matrix products over mixed real / coded operands. The path is chosen from
// the operand encodings:
//   log codes x log codes -> Method 2 (sum of Bitshift(1, w~ + x~))
//   log codes x real      -> Method 1 (sum of Bitshift(real, x~))
//   anything else         -> plain floating point on (dequantized) values
// Every fixed-point output is bit-identical to the scalar dot_method1 /
// dot_method2 applied to the same row pair.

#include <cstddef>
#include <optional>
#include <vector>

#include "lognet/lognum.hpp"

namespace lognet {

struct Operand {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // dequantized when coded
  std::vector<LogCode> codes;  // empty unless coded
  std::optional<QuantizerConfig> cfg;

  static Operand real(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Operand coded(std::size_t rows, std::size_t cols, std::vector<LogCode> codes, const QuantizerConfig& cfg);
  static Operand quantized(std::size_t rows, std::size_t cols, const std::vector<double>& values,
                           const QuantizerConfig& cfg);

  bool is_coded() const { return cfg.has_value(); }
  bool is_log_coded() const { return cfg && cfg->kind == QuantKind::log; }
  Operand transposed() const;
};

enum class KernelPath { floating, method1, method2 };

struct KernelOptions {
  AccumMode accum = AccumMode::linear;
  /// Forced accumulator format; when unset a per-product format is derived
  /// from the operand ranges (see method1_format / method2_format).
  std::optional<FixedFormat> format;
  int exponent_frac_bits = ExponentWord::kDefaultFracBits;
};

KernelPath select_path(const Operand& a, const Operand& bt);

/// Format holding every product of two codes exactly, with integer headroom
/// for `terms` additions. Capped at 62 bits by dropping low fraction bits.
FixedFormat method2_format(const QuantizerConfig& a, const QuantizerConfig& b, std::size_t terms);

/// Format for Method 1 with real operand magnitudes up to max_abs_real.
FixedFormat method1_format(double max_abs_real, const QuantizerConfig& coded, std::size_t terms);

/// C = A * Bt^T for A: M x K and Bt: N x K. Returns M x N row-major.
std::vector<double> gemm_nt(const Operand& a, const Operand& bt, const KernelOptions& opts = {});

}  // namespace lognet

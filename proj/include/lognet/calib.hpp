#pragma once

// FSR calibration and quantization-error analysis. The calibration criterion
// is the mean L1 error (1/N) sum |Q(x) - x| minimized over an integer FSR grid.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lognet/nn.hpp"

namespace lognet {

struct FsrGrid {
  int lo = -10;
  int hi = 20;

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(hi - lo + 1); }
};

/// Mean |Q(x) - x| in the order given; throws DomainError on an empty x.
double quant_error_l1(std::span<const double> x, const QuantizerConfig& cfg);
double quant_error_l1(const Tensor& x, const QuantizerConfig& cfg);

struct CandidateError {
  int fsr = 0;
  double l1 = 0;
};

struct Calibration {
  int fsr = 0;
  double l1 = 0;
  std::vector<CandidateError> candidates;  // one per grid point, ascending fsr
};

/// Errors are evaluated on a sorted copy, so the result does not depend on the
/// sample order. Ties go to the smaller FSR.
Calibration calibrate(std::span<const double> sample, const QuantizerConfig& cfg_template, const FsrGrid& grid = {});
int calibrate_fsr(std::span<const double> sample, const QuantizerConfig& cfg_template, const FsrGrid& grid = {});

struct Histogram {
  std::vector<double> edges;         // bins + 1 ascending edges
  std::vector<std::size_t> counts;   // bins entries, summing to N
  std::size_t zero_bin() const { return counts.size() / 2; }
};

/// Signed errors Q(x) - x over `bins` uniform bins spanning [-m, m] with
/// m = max |error| (m = 1 when every error is zero). bins must be even.
Histogram error_histogram(std::span<const double> x, const QuantizerConfig& cfg, std::size_t bins = 256);

struct LayerCalibration {
  std::size_t layer = 0;
  bool weights = false;  // weight quantizer (absolute fsr) vs activation quantizer
  QuantizerConfig cfg;   // chosen configuration
  int fsr_offset = 0;    // activation layers: chosen fsr - global fsr
  double l1_log = 0;     // best log error over the grid
  double l1_linear = 0;  // best linear error over the grid
  Calibration search;    // candidates for the configured quantizer kind
};

struct CalibrationReport {
  std::vector<LayerCalibration> layers;
};

/// Calibrates every activation quantizer (on the float32 input to that layer,
/// writing fsr_offset) and every conv/fc weight quantizer (writing its fsr).
/// `bitwidth` overrides the activation quantizer width when set.
CalibrationReport calibrate_model(ModelGraph& g, const Tensor& samples, const FsrGrid& grid = {},
                                  std::optional<int> bitwidth = std::nullopt);

}  // namespace lognet

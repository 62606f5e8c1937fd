#include "lognet/calib.hpp"

#include <algorithm>
#include <cmath>

#include "lognet/errors.hpp"
#include "lognet/parallel.hpp"

namespace lognet {

void FsrGrid::validate() const {
  if (lo > hi) throw ConfigError("empty fsr grid " + std::to_string(lo) + ":" + std::to_string(hi));
}

double quant_error_l1(std::span<const double> x, const QuantizerConfig& cfg) {
  if (x.empty()) throw DomainError("quant_error_l1: empty input");
  cfg.validate();
  double sum = 0;
  for (double v : x) sum += std::fabs(quantize_value(v, cfg) - v);
  return sum / static_cast<double>(x.size());
}

double quant_error_l1(const Tensor& x, const QuantizerConfig& cfg) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value_at(i);
  return quant_error_l1(v, cfg);
}

Calibration calibrate(std::span<const double> sample, const QuantizerConfig& cfg_template, const FsrGrid& grid) {
  if (sample.empty()) throw DomainError("calibrate_fsr: empty sample");
  grid.validate();
  if (!cfg_template.is_signed) {
    for (double v : sample) {
      if (v < 0) throw DomainError("calibrate_fsr: negative sample for an unsigned quantizer");
    }
  }
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());

  Calibration out;
  out.candidates.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    QuantizerConfig cfg = cfg_template;
    cfg.fsr = grid.lo + static_cast<int>(i);
    out.candidates[i] = {cfg.fsr, quant_error_l1(sorted, cfg)};
  });
  out.fsr = out.candidates.front().fsr;
  out.l1 = out.candidates.front().l1;
  for (const CandidateError& c : out.candidates) {
    if (c.l1 < out.l1) {
      out.fsr = c.fsr;
      out.l1 = c.l1;
    }
  }
  return out;
}

int calibrate_fsr(std::span<const double> sample, const QuantizerConfig& cfg_template, const FsrGrid& grid) {
  return calibrate(sample, cfg_template, grid).fsr;
}

Histogram error_histogram(std::span<const double> x, const QuantizerConfig& cfg, std::size_t bins) {
  if (bins == 0 || bins % 2 != 0) throw DomainError("error_histogram: bins must be even and positive");
  cfg.validate();
  std::vector<double> err(x.size());
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    err[i] = quantize_value(x[i], cfg) - x[i];
    m = std::max(m, std::fabs(err[i]));
  }
  if (m == 0) m = 1;
  Histogram h;
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  const double half = static_cast<double>(bins / 2);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = m * (static_cast<double>(i) - half) / half;
  for (double e : err) {
    const double pos = std::floor((e / m + 1.0) * half);
    const auto bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[bin];
  }
  return h;
}

namespace {

std::vector<double> tensor_values(const Tensor& t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = t.value_at(i);
  return v;
}

LayerCalibration calibrate_values(std::size_t layer, const std::vector<double>& v, const QuantizerConfig& tmpl,
                                  const FsrGrid& grid) {
  LayerCalibration lc;
  lc.layer = layer;
  lc.search = calibrate(v, tmpl, grid);
  lc.cfg = tmpl;
  lc.cfg.fsr = lc.search.fsr;
  QuantizerConfig log_t = tmpl, lin_t = tmpl;
  log_t.kind = QuantKind::log;
  lin_t.kind = QuantKind::linear;
  lin_t.base_frac_bits = 0;
  lc.l1_log = tmpl.kind == QuantKind::log ? lc.search.l1 : calibrate(v, log_t, grid).l1;
  lc.l1_linear = tmpl.kind == QuantKind::linear ? lc.search.l1 : calibrate(v, lin_t, grid).l1;
  return lc;
}

}  // namespace

CalibrationReport calibrate_model(ModelGraph& g, const Tensor& samples, const FsrGrid& grid,
                                  std::optional<int> bitwidth) {
  grid.validate();
  if (samples.rank() == 0 || samples.dim(0) == 0) throw DomainError("calibration needs at least one sample");
  ForwardOptions fwd;
  fwd.mode = ForwardMode::float32;
  const std::vector<Tensor> trace = forward_trace(g, samples, fwd);

  CalibrationReport report;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    LayerSpec& l = g.layers[i];
    if (l.is_quantizer()) {
      QuantizerConfig tmpl = *l.quant;
      if (bitwidth) tmpl.bitwidth = *bitwidth;
      const Tensor& in = i == 0 ? samples : trace[i - 1];
      LayerCalibration lc = calibrate_values(i, tensor_values(in), tmpl, grid);
      lc.fsr_offset = lc.cfg.fsr - g.global_fsr;
      l.quant = lc.cfg;
      l.fsr_offset = lc.fsr_offset;
      report.layers.push_back(std::move(lc));
    } else if (l.has_weights() && l.quant) {
      LayerCalibration lc = calibrate_values(i, tensor_values(g.weights.at(i)), *l.quant, grid);
      lc.weights = true;
      l.quant = lc.cfg;
      report.layers.push_back(std::move(lc));
    }
  }
  return report;
}

}  // namespace lognet

#pragma once

// Labeled sample sets and the bundled synthetic generators. Every draw goes
// through Rng so outputs are identical across standard libraries
// (std::*_distribution is implementation-defined).

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lognet/tensor.hpp"

namespace lognet {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Box-Muller, one value per call).
  double normal();
  /// Exp(1).
  double exponential();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

struct Dataset {
  Tensor inputs;            // N x ... (real)
  std::vector<int> labels;  // N entries
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  /// Throws ShapeError when the label count disagrees with the sample count.
  void validate() const;
  /// Copies the listed samples into a batch (N x sample_shape).
  std::vector<double> gather(std::span<const std::size_t> index) const;
  Dataset subset(std::size_t first, std::size_t count) const;
};

/// Uniform points in [-1, 1]^dims labeled [w . x > 0] for a random unit w.
/// Points with |w . x| < margin are redrawn.
Dataset make_separable(std::size_t n, std::size_t dims, std::uint64_t seed, double margin = 0.1);

/// Small single-channel images: each class is a fixed random smooth template;
/// a sample is its template shifted by up to `max_shift` pixels, scaled in
/// [0.7, 1.3] and corrupted by Gaussian noise of the given sigma.
struct ImageSetOptions {
  std::size_t samples = 10000;
  std::size_t size = 12;
  int classes = 10;
  int max_shift = 1;
  double noise = 0.35;
  std::uint64_t seed = 1;
  std::uint64_t template_seed = 7;  // fixed so train and test share templates
};
Dataset make_image_set(const ImageSetOptions& opts);

}  // namespace lognet

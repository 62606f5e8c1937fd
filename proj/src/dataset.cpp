#include "lognet/dataset.hpp"

#include <cmath>
#include <numbers>

#include "lognet/errors.hpp"

namespace lognet {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::below(0)");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::exponential() {
  double u;
  do {
    u = uniform();
  } while (u <= 0.0);
  return -std::log(u);
}

Shape Dataset::sample_shape() const {
  const Shape& s = inputs.shape();
  if (s.empty()) return {};
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  const std::size_t n = inputs.rank() ? inputs.dim(0) : 0;
  if (n != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(n) + " samples but " + std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || (classes > 0 && y >= classes)) throw ShapeError("label " + std::to_string(y) + " out of range");
  }
}

std::vector<double> Dataset::gather(std::span<const std::size_t> index) const {
  const std::size_t per = shape_size(sample_shape());
  std::vector<double> out(index.size() * per);
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= size()) throw ShapeError("sample index out of range");
    for (std::size_t j = 0; j < per; ++j) out[b * per + j] = inputs.value_at(index[b] * per + j);
  }
  return out;
}

Dataset Dataset::subset(std::size_t first, std::size_t count) const {
  if (first + count > size()) throw ShapeError("subset out of range");
  const std::size_t per = shape_size(sample_shape());
  std::vector<float> v(count * per);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(inputs.value_at(first * per + i));
  Shape s = inputs.shape();
  s[0] = count;
  Dataset out;
  out.inputs = Tensor::real(s, std::move(v));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                    labels.begin() + static_cast<std::ptrdiff_t>(first + count));
  out.classes = classes;
  return out;
}

Dataset make_separable(std::size_t n, std::size_t dims, std::uint64_t seed, double margin) {
  if (dims == 0) throw DomainError("make_separable: dims must be positive");
  Rng rng(seed);
  std::vector<double> w(dims);
  double norm = 0;
  for (double& x : w) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : w) x /= norm;

  std::vector<float> v(n * dims);
  Dataset out;
  out.classes = 2;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double proj;
    std::vector<double> p(dims);
    do {
      proj = 0;
      for (std::size_t d = 0; d < dims; ++d) {
        p[d] = rng.uniform(-1.0, 1.0);
        proj += p[d] * w[d];
      }
    } while (std::fabs(proj) < margin);
    for (std::size_t d = 0; d < dims; ++d) v[i * dims + d] = static_cast<float>(p[d]);
    out.labels[i] = proj > 0 ? 1 : 0;
  }
  out.inputs = Tensor::real({n, dims}, std::move(v));
  return out;
}

namespace {

// Smooth random template: a sum of a few Gaussian blobs, normalized to max 1.
std::vector<double> make_template(Rng& rng, std::size_t size) {
  std::vector<double> t(size * size, 0.0);
  const int blobs = 3;
  for (int k = 0; k < blobs; ++k) {
    const double cy = rng.uniform(1.5, static_cast<double>(size) - 2.5);
    const double cx = rng.uniform(1.5, static_cast<double>(size) - 2.5);
    const double s = rng.uniform(1.0, 2.5);
    const double a = rng.uniform(0.5, 1.0) * (k == blobs - 1 && rng.uniform() < 0.5 ? -0.6 : 1.0);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        t[y * size + x] += a * std::exp(-(dy * dy + dx * dx) / (2 * s * s));
      }
    }
  }
  double peak = 0;
  for (double x : t) peak = std::max(peak, std::fabs(x));
  for (double& x : t) x /= peak;
  return t;
}

}  // namespace

Dataset make_image_set(const ImageSetOptions& opts) {
  if (opts.classes < 2 || opts.size < 4 || opts.max_shift < 0) throw DomainError("make_image_set: bad options");
  const std::size_t sz = opts.size;
  Rng trng(opts.template_seed);
  std::vector<std::vector<double>> templates;
  for (int c = 0; c < opts.classes; ++c) templates.push_back(make_template(trng, sz));

  Rng rng(opts.seed);
  Dataset out;
  out.classes = opts.classes;
  out.labels.resize(opts.samples);
  std::vector<float> v(opts.samples * sz * sz);
  const auto span = static_cast<std::uint64_t>(2 * opts.max_shift + 1);
  for (std::size_t i = 0; i < opts.samples; ++i) {
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.classes)));
    out.labels[i] = label;
    const int sy = static_cast<int>(rng.below(span)) - opts.max_shift;
    const int sx = static_cast<int>(rng.below(span)) - opts.max_shift;
    const double amp = rng.uniform(0.7, 1.3);
    const auto& t = templates[static_cast<std::size_t>(label)];
    for (std::size_t y = 0; y < sz; ++y) {
      for (std::size_t x = 0; x < sz; ++x) {
        const int ty = static_cast<int>(y) - sy, tx = static_cast<int>(x) - sx;
        double base = 0;
        if (ty >= 0 && tx >= 0 && ty < static_cast<int>(sz) && tx < static_cast<int>(sz)) {
          base = t[static_cast<std::size_t>(ty) * sz + static_cast<std::size_t>(tx)];
        }
        v[i * sz * sz + y * sz + x] = static_cast<float>(amp * base + opts.noise * rng.normal());
      }
    }
  }
  out.inputs = Tensor::real({opts.samples, 1, sz, sz}, std::move(v));
  return out;
}

}  // namespace lognet

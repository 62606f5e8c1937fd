#include "lognet/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "lognet/errors.hpp"

namespace lognet {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

Tensor Tensor::real(Shape shape, std::vector<float> values) {
  if (values.size() != shape_size(shape)) {
    throw ShapeError("payload of " + std::to_string(values.size()) + " values does not match shape " +
                     shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.payload_ = std::move(values);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<float> values(shape_size(shape), 0.0f);
  return real(std::move(shape), std::move(values));
}

Tensor Tensor::quantized(Shape shape, std::vector<LogCode> codes, QuantizerConfig cfg) {
  if (codes.size() != shape_size(shape)) {
    throw ShapeError("payload of " + std::to_string(codes.size()) + " codes does not match shape " +
                     shape_string(shape));
  }
  cfg.validate();
  for (const LogCode& c : codes) check_code(c, cfg);
  Tensor t;
  t.shape_ = std::move(shape);
  t.payload_ = Coded{std::move(codes), cfg};
  return t;
}

std::span<const float> Tensor::values() const {
  if (const auto* v = std::get_if<std::vector<float>>(&payload_)) return *v;
  throw std::logic_error("tensor holds codes, not real values");
}

std::span<const LogCode> Tensor::codes() const {
  if (const auto* c = std::get_if<Coded>(&payload_)) return c->codes;
  throw std::logic_error("tensor holds real values, not codes");
}

const QuantizerConfig& Tensor::config() const {
  if (const auto* c = std::get_if<Coded>(&payload_)) return c->cfg;
  throw std::logic_error("tensor holds real values, not codes");
}

double Tensor::value_at(std::size_t flat) const {
  if (const auto* v = std::get_if<std::vector<float>>(&payload_)) return v->at(flat);
  const auto& c = std::get<Coded>(payload_);
  return dequantize(c.codes.at(flat), c.cfg);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor quantize_tensor(const Tensor& t, const QuantizerConfig& cfg) {
  cfg.validate();
  const Tensor real = dequantize_tensor(t);
  std::vector<LogCode> codes;
  codes.reserve(real.size());
  for (float v : real.values()) codes.push_back(quantize(v, cfg));
  return Tensor::quantized(t.shape(), std::move(codes), cfg);
}

Tensor dequantize_tensor(const Tensor& t) {
  if (!t.is_quantized()) return t;
  std::vector<float> values;
  values.reserve(t.size());
  for (const LogCode& c : t.codes()) values.push_back(static_cast<float>(dequantize(c, t.config())));
  return Tensor::real(t.shape(), std::move(values));
}

std::size_t Conv2dGeometry::out_h(std::size_t in_h) const {
  if (stride == 0 || in_h + 2 * pad < kernel_h) {
    throw ShapeError("kernel does not fit the padded input height");
  }
  return (in_h + 2 * pad - kernel_h) / stride + 1;
}

std::size_t Conv2dGeometry::out_w(std::size_t in_w) const {
  if (stride == 0 || in_w + 2 * pad < kernel_w) {
    throw ShapeError("kernel does not fit the padded input width");
  }
  return (in_w + 2 * pad - kernel_w) / stride + 1;
}

namespace {

template <typename T>
std::vector<T> lower(std::span<const T> src, const Shape& s, const Conv2dGeometry& g, T pad_value) {
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  const std::size_t cols = n * oh * ow;
  std::vector<T> out(c * g.kernel_h * g.kernel_w * cols, pad_value);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t row = (ci * g.kernel_h + ky) * g.kernel_w + kx;
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t y = 0; y < oh; ++y) {
            const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t x = 0; x < ow; ++x) {
              const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              out[row * cols + (b * oh + y) * ow + x] =
                  src[((b * c + ci) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor im2col(const Tensor& t, const Conv2dGeometry& geom) {
  if (t.rank() != 4) throw ShapeError("im2col expects an NCHW tensor, got " + shape_string(t.shape()));
  const Shape& s = t.shape();
  const Shape out_shape{s[1] * geom.kernel_h * geom.kernel_w, s[0] * geom.out_h(s[2]) * geom.out_w(s[3])};
  if (t.is_quantized()) {
    return Tensor::quantized(out_shape, lower<LogCode>(t.codes(), s, geom, LogCode::zero()), t.config());
  }
  return Tensor::real(out_shape, lower<float>(t.values(), s, geom, 0.0f));
}

}  // namespace lognet

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lognet/lognum.hpp"

namespace lognet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array holding either float values or codes that share one
/// QuantizerConfig. Activations are NCHW, conv weights OutC x InC x Kh x Kw,
/// FC weights Out x In.
class Tensor {
 public:
  Tensor() = default;

  static Tensor real(Shape shape, std::vector<float> values);
  static Tensor zeros(Shape shape);
  static Tensor quantized(Shape shape, std::vector<LogCode> codes, QuantizerConfig cfg);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return shape_size(shape_); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  bool is_quantized() const { return std::holds_alternative<Coded>(payload_); }

  /// Real payload. Throws if the tensor is quantized.
  std::span<const float> values() const;
  std::span<const LogCode> codes() const;
  const QuantizerConfig& config() const;

  /// Value at flat index; dequantizes coded payloads.
  double value_at(std::size_t flat) const;

  Tensor reshaped(Shape shape) const;

 private:
  struct Coded {
    std::vector<LogCode> codes;
    QuantizerConfig cfg;
  };

  Shape shape_;
  std::variant<std::vector<float>, Coded> payload_;
};

/// Elementwise logquant / linquant; shape preserved.
Tensor quantize_tensor(const Tensor& t, const QuantizerConfig& cfg);

/// Real tensor of the dequantized codes (identity on real tensors).
Tensor dequantize_tensor(const Tensor& t);

struct Conv2dGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;
};

/// Lowers an N x C x H x W tensor to a (C*Kh*Kw) x (N*OH*OW) matrix. Each
/// column is one receptive field; padded positions hold 0 (or the zero code).
Tensor im2col(const Tensor& t, const Conv2dGeometry& geom);

}  // namespace lognet

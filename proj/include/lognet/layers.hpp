#pragma once

// Batched layer kernels shared by inference (nn::forward) and training.
// Activations travel as double values plus, after a quantizer, their codes.
// Conv and FC products go through gemm_nt, so the arithmetic path follows
// the operand encodings.

#include <cstddef>
#include <optional>
#include <vector>

#include "lognet/kernels.hpp"
#include "lognet/tensor.hpp"

namespace lognet {

struct Activation {
  Shape shape;                 // N x C x H x W or N x F
  std::vector<double> values;  // real, or dequantized codes
  std::vector<LogCode> codes;  // set after a quantizer
  std::optional<QuantizerConfig> cfg;

  bool is_coded() const { return cfg.has_value(); }
  std::size_t batch() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t per_sample() const { return batch() ? values.size() / batch() : 0; }

  static Activation real(Shape shape, std::vector<double> values);
  static Activation from_tensor(const Tensor& t);
  Tensor to_tensor() const;
  /// Reinterprets as a rows x cols operand (codes kept).
  Operand as_operand(std::size_t rows, std::size_t cols) const;
};

Activation quantize_activation(const Activation& in, const QuantizerConfig& cfg);

// ---- conv ----------------------------------------------------------------

struct ConvShape {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Conv2dGeometry geom;

  std::size_t patch() const { return in_channels * geom.kernel_h * geom.kernel_w; }
};

struct ConvCache {
  Shape input_shape;
  Operand patches;  // (N*OH*OW) x patch, one receptive field per row
};

/// weights: out_channels x patch.
Activation conv_forward(const Activation& in, const Operand& weights, const ConvShape& cs,
                        const KernelOptions& opts, ConvCache* cache = nullptr);

struct LinearGrads {
  std::vector<double> input;    // empty when not requested
  std::vector<double> weights;  // same layout as the forward weights
};

/// grad_out: N x (OutC*OH*OW), already quantized when the caller quantizes gradients.
LinearGrads conv_backward(const Operand& grad_out, const Operand& weights, const ConvShape& cs,
                          const ConvCache& cache, const KernelOptions& opts, bool need_input_grad);

/// Reorders an N x C x P gradient into a C x (N*P) operand (codes kept).
Operand channel_major(const Operand& nchw, std::size_t n, std::size_t c, std::size_t p);

// ---- fully connected -----------------------------------------------------

struct FcCache {
  Shape input_shape;
  Operand input;  // N x In
};

/// weights: Out x In.
Activation fc_forward(const Activation& in, const Operand& weights, std::size_t out_features,
                      const KernelOptions& opts, FcCache* cache = nullptr);

/// grad_out: N x Out.
LinearGrads fc_backward(const Operand& grad_out, const Operand& weights, const FcCache& cache,
                        const KernelOptions& opts, bool need_input_grad);

// ---- elementwise / pooling / normalization ---------------------------------

Activation relu_forward(const Activation& in, std::vector<std::uint8_t>* mask = nullptr);
std::vector<double> relu_backward(const std::vector<double>& grad, const std::vector<std::uint8_t>& mask);

struct PoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output
};

Activation maxpool_forward(const Activation& in, std::size_t k, std::size_t stride, PoolCache* cache = nullptr);
std::vector<double> maxpool_backward(const std::vector<double>& grad, const PoolCache& cache);

struct BatchNormState {
  std::vector<double> gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState identity(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

struct BatchNormCache {
  Shape shape;
  std::vector<double> normalized;
  std::vector<double> inv_std;
};

/// training = true normalizes with batch statistics and updates the running stats.
Activation batchnorm_forward(const Activation& in, BatchNormState& state, bool training,
                             BatchNormCache* cache = nullptr);
Activation batchnorm_inference(const Activation& in, const BatchNormState& state);

struct BatchNormGrads {
  std::vector<double> input, gamma, beta;
};
BatchNormGrads batchnorm_backward(const std::vector<double>& grad, const BatchNormState& state,
                                  const BatchNormCache& cache);

/// Row-wise softmax of an N x K activation.
Activation softmax_forward(const Activation& in);

}  // namespace lognet

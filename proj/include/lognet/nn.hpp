#pragma once

// Layer graph and the quantized forward pass.
//
// A ModelGraph is an ordered list of LayerSpecs. Activation quantizer layers
// (logquant / linearquant) run at FSR = global_fsr + fsr_offset. Conv and FC
// layers may carry a weight quantizer whose FSR is absolute.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lognet/layers.hpp"
#include "lognet/tensor.hpp"

namespace lognet {

enum class LayerKind : std::uint8_t {
  conv = 1,
  fc = 2,
  relu = 3,
  maxpool = 4,
  batchnorm = 5,
  logquant = 6,
  linearquant = 7,
  softmax = 8,
};

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // conv
  std::uint32_t in_channels = 0, out_channels = 0, kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;
  // fc
  std::uint32_t in_features = 0, out_features = 0;
  // maxpool
  std::uint32_t pool_kernel = 0, pool_stride = 0;
  // batchnorm
  std::uint32_t channels = 0;

  /// Weight quantizer for conv/fc; the activation quantizer for quantizer layers.
  std::optional<QuantizerConfig> quant;
  std::int32_t fsr_offset = 0;

  static LayerSpec conv(std::uint32_t in_c, std::uint32_t out_c, std::uint32_t k, std::uint32_t stride = 1,
                        std::uint32_t pad = 0);
  static LayerSpec fc(std::uint32_t in, std::uint32_t out);
  static LayerSpec relu();
  static LayerSpec maxpool(std::uint32_t k, std::uint32_t stride);
  static LayerSpec batchnorm(std::uint32_t channels);
  static LayerSpec logquant(const QuantizerConfig& cfg, std::int32_t fsr_offset = 0);
  static LayerSpec linearquant(const QuantizerConfig& cfg, std::int32_t fsr_offset = 0);
  static LayerSpec softmax();

  bool has_weights() const { return kind == LayerKind::conv || kind == LayerKind::fc; }
  bool is_quantizer() const { return kind == LayerKind::logquant || kind == LayerKind::linearquant; }
  Shape weight_shape() const;
  ConvShape conv_shape() const;
  bool operator==(const LayerSpec&) const = default;
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  int global_fsr = 0;
  std::map<std::size_t, Tensor> weights;  // conv/fc layer index -> weights
  std::map<std::size_t, BatchNormState> batchnorm;

  /// Effective activation quantizer of a logquant/linearquant layer.
  QuantizerConfig activation_config(std::size_t layer) const;

  /// Shape inference from a per-batch input shape; throws ShapeError on the
  /// first incompatible layer and ConfigError on missing weights/params.
  Shape output_shape(const Shape& input) const;
  void validate(const Shape& input) const;
};

enum class ForwardMode { float32, method1, method2_base2, method2_sqrt2 };

std::string to_string(ForwardMode mode);
std::optional<ForwardMode> parse_forward_mode(const std::string& text);

struct ForwardOptions {
  ForwardMode mode = ForwardMode::float32;
  AccumMode accum = AccumMode::linear;
  std::optional<FixedFormat> format;  // unset: per-layer exact format
  int exponent_frac_bits = ExponentWord::kDefaultFracBits;
  /// float32 only: apply the activation quantizers but keep float arithmetic
  /// (the float forward over dequantized activations).
  bool dequantized_activations = false;
};

/// Runs the layer pipeline:
///   float32        all quantizers bypassed, real weights (see dequantized_activations)
///   method1        activation quantizers active, real weights (Bitshift(w, x~))
///   method2_base2  weights log-quantized with their base-2 quantizer (Bitshift(1, w~ + x~))
///   method2_sqrt2  as method2 with base-sqrt2 weight codes
Tensor forward(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts = {});

/// Output of every layer, in order (used by calibration and tests).
std::vector<Tensor> forward_trace(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts = {});

/// Weight operand of conv/fc layer `layer` as prepared for `mode`.
Operand weight_operand(const ModelGraph& g, std::size_t layer, ForwardMode mode);

/// conv-BN-ReLU-Q-pool x2, then FC-BN-ReLU-Q and a final FC (logits).
struct CnnOptions {
  std::uint32_t channels = 1;
  std::uint32_t image = 12;  // square input side, divisible by 4
  std::uint32_t conv1 = 8;
  std::uint32_t conv2 = 16;
  std::uint32_t hidden = 64;
  std::uint32_t classes = 10;
  QuantizerConfig activation = log_config(4, false, 0);
};
ModelGraph make_small_cnn(const CnnOptions& opts = {});

/// FC-ReLU-Q-FC.
ModelGraph make_mlp(std::uint32_t in, std::uint32_t hidden, std::uint32_t classes,
                    const QuantizerConfig& activation = log_config(4, false, 0));

Tensor relu(const Tensor& t);
Tensor maxpool(const Tensor& t, std::size_t k, std::size_t stride);
/// Normalizes with batch statistics (training) or the running statistics.
Tensor batchnorm_forward(const Tensor& t, BatchNormState& params, bool training);

}  // namespace lognet

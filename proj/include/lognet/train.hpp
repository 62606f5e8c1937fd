#pragma once

// Quantized training. Each minibatch follows the log-domain training loop:
//   forward:  W^q = LogQuant(W), a_k = ReLU(a^q_{k-1} W^q_k), a^q_k = LogQuant(a_k)
//   backward: g^q = LogQuant(g_{a_k}), g_{a_{k-1}} = g^q W^q, g_W = g^q^T a^q
//   update:   W <- Update(W, g_W) in full precision
// Quantizers have no derivative (straight-through). Everything else (BN,
// softmax, loss, optimizer) is real arithmetic in double precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lognet/dataset.hpp"
#include "lognet/nn.hpp"

namespace lognet {

struct OptimizerConfig {
  enum class Rule { sgd_momentum, adam };
  Rule rule = Rule::sgd_momentum;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  /// Weight quantizer; its fsr is replaced per epoch by the max|W| rule.
  std::optional<QuantizerConfig> weight_q;
  /// Applied at the graph's quantizer layers with fsr + the layer's fsr_offset.
  /// Unset: quantizer layers are bypassed.
  std::optional<QuantizerConfig> activation_q;
  /// Gradient quantizer; fsr chosen per tensor per step. Unset: real gradients.
  std::optional<QuantizerConfig> gradient_q;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 1;
  /// Step decay: lr * lr_decay^(epoch / lr_step_epochs); 0 keeps lr constant.
  std::size_t lr_step_epochs = 0;
  double lr_decay = 0.1;
  /// Horizontal flip + 1-pixel pad-crop on image inputs.
  bool augment = false;
  int gradient_fsr_floor = -20;
  /// Forced accumulator format for quantized products (unset: exact per layer).
  std::optional<FixedFormat> accumulator;

  /// Activation quantizer unsigned, weight and gradient quantizers signed.
  void validate() const;
  double learning_rate(std::size_t epoch) const;
};

struct Moments {
  std::vector<double> m, v;
};

struct TrainState {
  ModelGraph graph;  // architecture and BN parameters; graph.weights unused
  Shape sample_shape;  // one input sample, without the batch dimension
  std::map<std::size_t, std::vector<double>> weights;  // full-precision W_k
  std::map<std::size_t, int> weight_fsr;               // current weight quantizer FSR
  std::map<std::pair<std::size_t, int>, Moments> moments;  // (layer, slot)
  std::size_t epoch = 0;
  std::size_t step = 0;
  Rng rng;
};

/// He-uniform weights (limit sqrt(6 / fan_in)), identity BN, seeded.
TrainState init_state(const ModelGraph& arch, const Shape& sample_shape, std::uint64_t seed);

/// ceil(log2(max|g|)); an all-zero tensor gives `floor_value`.
int dynamic_gradient_fsr(std::span<const double> g, int floor_value = -20);

/// Quantizer FSR used for gradients and weights: dynamic_gradient_fsr + 1 for a
/// non-zero tensor. The top code is 2^(FSR-1), so this is the smallest FSR at
/// which no element clips high.
int covering_fsr(std::span<const double> g, int floor_value = -20);

/// Recomputes every weight quantizer FSR from the current max |W|.
void refresh_weight_fsr(TrainState& state, const TrainConfig& cfg);

/// One update of `w` in place. `t` is the 1-based step count (Adam bias correction).
void optimizer_step(std::span<double> w, std::span<const double> g, Moments& moments, const OptimizerConfig& rule,
                    double lr, std::size_t t);

struct StepResult {
  double loss = 0;
  std::size_t correct = 0;
};

/// inputs: N x sample_shape flattened, labels: N entries.
StepResult train_minibatch(TrainState& state, std::span<const double> inputs, std::span<const int> labels,
                           const TrainConfig& cfg);

/// Gradients of the mean loss for one batch (layer index -> dL/dW under slot 0,
/// BN gamma and beta under slots 1 and 2). Only BN running stats change.
struct Gradients {
  double loss = 0;
  std::size_t correct = 0;
  std::map<std::pair<std::size_t, int>, std::vector<double>> params;
};
Gradients compute_gradients(TrainState& state, std::span<const double> inputs, std::span<const int> labels,
                            const TrainConfig& cfg);

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

/// Inference-mode pass (BN running stats) with the training quantizers.
EvalResult evaluate(const TrainState& state, const Dataset& data, const TrainConfig& cfg,
                    std::size_t batch_size = 256);

struct EpochMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;
  double train_acc = 0;
  double test_acc = 0;
};

/// Runs cfg.epochs epochs from the current state; calls on_epoch after each.
std::vector<EpochMetrics> fit(TrainState& state, const Dataset& train, const Dataset* test, const TrainConfig& cfg,
                              const std::function<void(const EpochMetrics&, const TrainState&)>& on_epoch = {});

/// Inference graph: f32 weights, weight quantizer blocks with the current FSR,
/// activation quantizer at global_fsr = activation_q.fsr.
ModelGraph export_model(const TrainState& state, const TrainConfig& cfg);

/// Rebuilds a training state from a stored model (weights and BN parameters).
TrainState state_from_model(const ModelGraph& g, const Shape& sample_shape, std::uint64_t seed);

}  // namespace lognet

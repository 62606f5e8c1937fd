#include "lognet/nn.hpp"

#include "lognet/errors.hpp"

namespace lognet {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::fc: return "fc";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::logquant: return "logquant";
    case LayerKind::linearquant: return "linearquant";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(std::uint32_t in_c, std::uint32_t out_c, std::uint32_t k, std::uint32_t stride,
                          std::uint32_t pad) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.in_channels = in_c;
  s.out_channels = out_c;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::fc(std::uint32_t in, std::uint32_t out) {
  LayerSpec s;
  s.kind = LayerKind::fc;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool(std::uint32_t k, std::uint32_t stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.pool_kernel = k;
  s.pool_stride = stride;
  return s;
}

LayerSpec LayerSpec::batchnorm(std::uint32_t channels) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.channels = channels;
  return s;
}

LayerSpec LayerSpec::logquant(const QuantizerConfig& cfg, std::int32_t fsr_offset) {
  if (cfg.kind != QuantKind::log) throw ConfigError("logquant layer needs a log quantizer");
  LayerSpec s;
  s.kind = LayerKind::logquant;
  s.quant = cfg;
  s.fsr_offset = fsr_offset;
  return s;
}

LayerSpec LayerSpec::linearquant(const QuantizerConfig& cfg, std::int32_t fsr_offset) {
  if (cfg.kind != QuantKind::linear) throw ConfigError("linearquant layer needs a linear quantizer");
  LayerSpec s;
  s.kind = LayerKind::linearquant;
  s.quant = cfg;
  s.fsr_offset = fsr_offset;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  return s;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::conv) return {out_channels, in_channels, kernel_h, kernel_w};
  if (kind == LayerKind::fc) return {out_features, in_features};
  return {};
}

ConvShape LayerSpec::conv_shape() const {
  return ConvShape{in_channels, out_channels, Conv2dGeometry{kernel_h, kernel_w, stride, pad}};
}

QuantizerConfig ModelGraph::activation_config(std::size_t layer) const {
  const LayerSpec& spec = layers.at(layer);
  if (!spec.is_quantizer() || !spec.quant) throw ConfigError("layer " + std::to_string(layer) + " is not a quantizer");
  QuantizerConfig cfg = *spec.quant;
  cfg.fsr = global_fsr + spec.fsr_offset;
  cfg.validate();
  return cfg;
}

Shape ModelGraph::output_shape(const Shape& input) const {
  Shape s = input;
  auto fail = [&](std::size_t i, const std::string& why) {
    throw ShapeError("layer " + std::to_string(i) + " (" + to_string(layers[i].kind) + "): " + why + ", input " +
                     shape_string(s));
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        if (s.size() != 4) fail(i, "expects NCHW input");
        if (s[1] != l.in_channels) fail(i, "channel count mismatch");
        if (l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0) fail(i, "degenerate kernel");
        const Conv2dGeometry g = l.conv_shape().geom;
        s = {s[0], l.out_channels, g.out_h(s[2]), g.out_w(s[3])};
        break;
      }
      case LayerKind::fc: {
        std::size_t features = 1;
        for (std::size_t d = 1; d < s.size(); ++d) features *= s[d];
        if (features != l.in_features) fail(i, "expects " + std::to_string(l.in_features) + " features");
        s = {s[0], l.out_features};
        break;
      }
      case LayerKind::maxpool:
        if (s.size() != 4) fail(i, "expects NCHW input");
        if (l.pool_kernel == 0 || l.pool_stride == 0 || s[2] < l.pool_kernel || s[3] < l.pool_kernel) {
          fail(i, "window does not fit");
        }
        s = {s[0], s[1], (s[2] - l.pool_kernel) / l.pool_stride + 1, (s[3] - l.pool_kernel) / l.pool_stride + 1};
        break;
      case LayerKind::batchnorm:
        if (s.size() < 2 || s[1] != l.channels) fail(i, "channel count mismatch");
        break;
      case LayerKind::logquant:
      case LayerKind::linearquant:
        if (!l.quant) throw ConfigError("quantizer layer " + std::to_string(i) + " has no quantizer config");
        break;
      case LayerKind::relu:
      case LayerKind::softmax:
        break;
    }
  }
  return s;
}

void ModelGraph::validate(const Shape& input) const {
  output_shape(input);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.has_weights()) {
      const auto it = weights.find(i);
      if (it == weights.end()) throw ConfigError("layer " + std::to_string(i) + " has no weights");
      if (it->second.shape() != l.weight_shape()) {
        throw ShapeError("layer " + std::to_string(i) + " weights are " + shape_string(it->second.shape()) +
                         ", expected " + shape_string(l.weight_shape()));
      }
    }
    if (l.kind == LayerKind::batchnorm) {
      const auto it = batchnorm.find(i);
      if (it == batchnorm.end()) throw ConfigError("batchnorm layer " + std::to_string(i) + " has no parameters");
      if (it->second.channels() != l.channels) throw ShapeError("batchnorm parameter count mismatch");
    }
  }
}

std::string to_string(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::float32: return "float32";
    case ForwardMode::method1: return "method1";
    case ForwardMode::method2_base2: return "method2_base2";
    case ForwardMode::method2_sqrt2: return "method2_sqrt2";
  }
  return "unknown";
}

std::optional<ForwardMode> parse_forward_mode(const std::string& text) {
  for (ForwardMode m : {ForwardMode::float32, ForwardMode::method1, ForwardMode::method2_base2,
                        ForwardMode::method2_sqrt2}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

Operand weight_operand(const ModelGraph& g, std::size_t layer, ForwardMode mode) {
  const LayerSpec& spec = g.layers.at(layer);
  const auto it = g.weights.find(layer);
  if (it == g.weights.end()) throw ConfigError("layer " + std::to_string(layer) + " has no weights");
  const Tensor& w = it->second;
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.size() / rows;

  std::vector<double> values(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) values[i] = w.value_at(i);

  if (mode == ForwardMode::float32 || mode == ForwardMode::method1) return Operand::real(rows, cols, std::move(values));

  if (!spec.quant) {
    throw ConfigError("mode " + to_string(mode) + " needs a weight quantizer on layer " + std::to_string(layer));
  }
  QuantizerConfig cfg = *spec.quant;
  if (cfg.kind != QuantKind::log) {
    throw ConfigError("mode " + to_string(mode) + " needs a log weight quantizer on layer " + std::to_string(layer));
  }
  cfg.base_frac_bits = mode == ForwardMode::method2_sqrt2 ? 1 : 0;
  if (w.is_quantized() && w.config() == cfg) {
    return Operand::coded(rows, cols, std::vector<LogCode>(w.codes().begin(), w.codes().end()), cfg);
  }
  return Operand::quantized(rows, cols, values, cfg);
}

namespace {

template <typename Sink>
Activation run(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts, Sink&& sink) {
  g.validate(input.shape());
  const bool quantize_activations = opts.mode != ForwardMode::float32;
  const KernelOptions kopts{opts.accum, opts.format, opts.exponent_frac_bits};

  Activation a = Activation::from_tensor(input);
  if (!quantize_activations && a.is_coded()) {
    a.codes.clear();
    a.cfg.reset();
  }
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    switch (l.kind) {
      case LayerKind::conv:
        a = conv_forward(a, weight_operand(g, i, opts.mode), l.conv_shape(), kopts);
        break;
      case LayerKind::fc:
        a = fc_forward(a, weight_operand(g, i, opts.mode), l.out_features, kopts);
        break;
      case LayerKind::relu:
        a = relu_forward(a);
        break;
      case LayerKind::maxpool:
        a = maxpool_forward(a, l.pool_kernel, l.pool_stride);
        break;
      case LayerKind::batchnorm:
        a = batchnorm_inference(a, g.batchnorm.at(i));
        break;
      case LayerKind::logquant:
      case LayerKind::linearquant:
        if (quantize_activations) {
          a = quantize_activation(a, g.activation_config(i));
        } else if (opts.dequantized_activations) {
          a = Activation::real(a.shape, quantize_activation(a, g.activation_config(i)).values);
        }
        break;
      case LayerKind::softmax:
        a = softmax_forward(a);
        break;
    }
    sink(a);
  }
  return a;
}

}  // namespace

Tensor forward(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts) {
  return run(g, input, opts, [](const Activation&) {}).to_tensor();
}

std::vector<Tensor> forward_trace(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts) {
  std::vector<Tensor> trace;
  run(g, input, opts, [&](const Activation& a) { trace.push_back(a.to_tensor()); });
  return trace;
}

namespace {

LayerSpec quantizer_layer(const QuantizerConfig& q) {
  return q.kind == QuantKind::log ? LayerSpec::logquant(q) : LayerSpec::linearquant(q);
}

}  // namespace

ModelGraph make_small_cnn(const CnnOptions& o) {
  if (o.image % 4 != 0 || o.image == 0) throw ConfigError("image side must be a positive multiple of 4");
  ModelGraph g;
  g.global_fsr = o.activation.fsr;
  auto& L = g.layers;
  L.push_back(LayerSpec::conv(o.channels, o.conv1, 3, 1, 1));
  L.push_back(LayerSpec::batchnorm(o.conv1));
  L.push_back(LayerSpec::relu());
  L.push_back(quantizer_layer(o.activation));
  L.push_back(LayerSpec::maxpool(2, 2));
  L.push_back(LayerSpec::conv(o.conv1, o.conv2, 3, 1, 1));
  L.push_back(LayerSpec::batchnorm(o.conv2));
  L.push_back(LayerSpec::relu());
  L.push_back(quantizer_layer(o.activation));
  L.push_back(LayerSpec::maxpool(2, 2));
  const std::uint32_t side = o.image / 4;
  L.push_back(LayerSpec::fc(o.conv2 * side * side, o.hidden));
  L.push_back(LayerSpec::batchnorm(o.hidden));
  L.push_back(LayerSpec::relu());
  L.push_back(quantizer_layer(o.activation));
  L.push_back(LayerSpec::fc(o.hidden, o.classes));
  for (std::size_t i = 0; i < L.size(); ++i) {
    if (L[i].kind == LayerKind::batchnorm) g.batchnorm[i] = BatchNormState::identity(L[i].channels);
  }
  return g;
}

ModelGraph make_mlp(std::uint32_t in, std::uint32_t hidden, std::uint32_t classes, const QuantizerConfig& activation) {
  ModelGraph g;
  g.global_fsr = activation.fsr;
  g.layers = {LayerSpec::fc(in, hidden), LayerSpec::relu(), quantizer_layer(activation), LayerSpec::fc(hidden, classes)};
  return g;
}

Tensor relu(const Tensor& t) { return relu_forward(Activation::from_tensor(t)).to_tensor(); }

Tensor maxpool(const Tensor& t, std::size_t k, std::size_t stride) {
  return maxpool_forward(Activation::from_tensor(t), k, stride).to_tensor();
}

Tensor batchnorm_forward(const Tensor& t, BatchNormState& params, bool training) {
  return batchnorm_forward(Activation::from_tensor(t), params, training).to_tensor();
}

}  // namespace lognet

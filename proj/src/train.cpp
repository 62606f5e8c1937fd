#include "lognet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lognet/errors.hpp"

namespace lognet {

void TrainConfig::validate() const {
  if (weight_q) {
    weight_q->validate();
    if (!weight_q->is_signed) throw ConfigError("weight quantizer must be signed");
  }
  if (activation_q) {
    activation_q->validate();
    if (activation_q->is_signed) throw ConfigError("activation quantizer must be unsigned");
  }
  if (gradient_q) {
    gradient_q->validate();
    if (!gradient_q->is_signed) throw ConfigError("gradient quantizer must be signed");
  }
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(optimizer.lr >= 0)) throw ConfigError("learning rate must be non-negative");
}

double TrainConfig::learning_rate(std::size_t epoch) const {
  if (lr_step_epochs == 0) return optimizer.lr;
  return optimizer.lr * std::pow(lr_decay, static_cast<double>(epoch / lr_step_epochs));
}

namespace {

std::size_t weight_rows(const LayerSpec& l) { return l.weight_shape().at(0); }
std::size_t weight_cols(const LayerSpec& l) {
  const Shape s = l.weight_shape();
  return shape_size(s) / s.at(0);
}

}  // namespace

TrainState init_state(const ModelGraph& arch, const Shape& sample_shape, std::uint64_t seed) {
  TrainState st;
  st.graph = arch;
  st.graph.weights.clear();
  st.rng = Rng(seed);
  st.sample_shape = sample_shape;
  Shape input = sample_shape;
  input.insert(input.begin(), 1);
  st.graph.output_shape(input);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (l.has_weights()) {
      const std::size_t fan_in = weight_cols(l);
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::vector<double> w(shape_size(l.weight_shape()));
      for (double& x : w) x = st.rng.uniform(-limit, limit);
      st.weights[i] = std::move(w);
    } else if (l.kind == LayerKind::batchnorm) {
      st.graph.batchnorm[i] = BatchNormState::identity(l.channels);
    }
  }
  return st;
}

int dynamic_gradient_fsr(std::span<const double> g, int floor_value) {
  double peak = 0;
  for (double x : g) peak = std::max(peak, std::fabs(x));
  if (peak == 0 || !std::isfinite(peak)) return floor_value;
  int e;
  const double m = std::frexp(peak, &e);  // peak = m * 2^e, m in [0.5, 1)
  return m == 0.5 ? e - 1 : e;
}

int covering_fsr(std::span<const double> g, int floor_value) {
  const int f = dynamic_gradient_fsr(g, floor_value);
  for (double x : g) {
    if (x != 0 && std::isfinite(x)) return f + 1;
  }
  return f;
}

void refresh_weight_fsr(TrainState& state, const TrainConfig& cfg) {
  for (const auto& [layer, w] : state.weights) {
    state.weight_fsr[layer] = cfg.weight_q ? covering_fsr(w, cfg.gradient_fsr_floor) : 0;
  }
}

void optimizer_step(std::span<double> w, std::span<const double> g, Moments& mom, const OptimizerConfig& rule,
                    double lr, std::size_t t) {
  if (w.size() != g.size()) throw ShapeError("optimizer: weight and gradient sizes differ");
  if (mom.m.size() != w.size()) mom.m.assign(w.size(), 0.0);
  if (rule.rule == OptimizerConfig::Rule::sgd_momentum) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = rule.momentum * mom.m[i] + g[i];
      w[i] -= lr * mom.m[i];
    }
    return;
  }
  if (t == 0) throw DomainError("adam step count starts at 1");
  if (mom.v.size() != w.size()) mom.v.assign(w.size(), 0.0);
  const double c1 = 1.0 - std::pow(rule.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(rule.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    mom.m[i] = rule.beta1 * mom.m[i] + (1.0 - rule.beta1) * g[i];
    mom.v[i] = rule.beta2 * mom.v[i] + (1.0 - rule.beta2) * g[i] * g[i];
    w[i] -= lr * (mom.m[i] / c1) / (std::sqrt(mom.v[i] / c2) + rule.eps);
  }
}

namespace {

struct LayerCache {
  ConvCache conv;
  FcCache fc;
  std::vector<std::uint8_t> mask;
  PoolCache pool;
  BatchNormCache bn;
};

struct Pass {
  std::vector<LayerCache> caches;
  std::map<std::size_t, Operand> wops;
  Activation logits;
  std::size_t last = 0;  // index one past the last layer run
};

std::size_t trainable_end(const ModelGraph& g) {
  std::size_t end = g.layers.size();
  while (end > 0 && g.layers[end - 1].kind == LayerKind::softmax) --end;
  for (std::size_t i = 0; i < end; ++i) {
    if (g.layers[i].kind == LayerKind::softmax) throw ConfigError("softmax is only supported as the final layer");
  }
  return end;
}

KernelOptions kernel_options(const TrainConfig& cfg) {
  KernelOptions k;
  k.format = cfg.accumulator;
  return k;
}

Operand weight_op(const TrainState& st, std::size_t i, const TrainConfig& cfg) {
  const LayerSpec& l = st.graph.layers[i];
  const std::vector<double>& w = st.weights.at(i);
  if (!cfg.weight_q) return Operand::real(weight_rows(l), weight_cols(l), w);
  QuantizerConfig q = *cfg.weight_q;
  const auto it = st.weight_fsr.find(i);
  q.fsr = it == st.weight_fsr.end() ? covering_fsr(w, cfg.gradient_fsr_floor) : it->second;
  return Operand::quantized(weight_rows(l), weight_cols(l), w, q);
}

QuantizerConfig activation_cfg(const TrainConfig& cfg, const LayerSpec& l) {
  QuantizerConfig q = *cfg.activation_q;
  q.fsr += l.fsr_offset;
  return q;
}

// bn_mut == nullptr selects inference-mode batch norm.
Pass run_forward(const TrainState& st, std::map<std::size_t, BatchNormState>* bn_mut, std::span<const double> inputs,
                 std::size_t n, const TrainConfig& cfg, bool keep_cache) {
  Pass pass;
  pass.last = trainable_end(st.graph);
  pass.caches.resize(keep_cache ? pass.last : 0);
  const KernelOptions kopts = kernel_options(cfg);

  const std::size_t per = shape_size(st.sample_shape);
  if (n == 0 || per * n != inputs.size()) {
    throw ShapeError("expected " + std::to_string(n) + " samples of " + shape_string(st.sample_shape));
  }
  Activation a;
  a.values.assign(inputs.begin(), inputs.end());
  a.shape = st.sample_shape;
  a.shape.insert(a.shape.begin(), n);
  for (std::size_t i = 0; i < pass.last; ++i) {
    const LayerSpec& l = st.graph.layers[i];
    LayerCache* c = keep_cache ? &pass.caches[i] : nullptr;
    switch (l.kind) {
      case LayerKind::conv: {
        auto it = pass.wops.emplace(i, weight_op(st, i, cfg)).first;
        a = conv_forward(a, it->second, l.conv_shape(), kopts, c ? &c->conv : nullptr);
        break;
      }
      case LayerKind::fc: {
        auto it = pass.wops.emplace(i, weight_op(st, i, cfg)).first;
        a = fc_forward(a, it->second, l.out_features, kopts, c ? &c->fc : nullptr);
        break;
      }
      case LayerKind::relu:
        a = relu_forward(a, c ? &c->mask : nullptr);
        break;
      case LayerKind::maxpool:
        a = maxpool_forward(a, l.pool_kernel, l.pool_stride, c ? &c->pool : nullptr);
        break;
      case LayerKind::batchnorm:
        if (bn_mut) {
          a = batchnorm_forward(a, bn_mut->at(i), true, c ? &c->bn : nullptr);
        } else {
          a = batchnorm_inference(a, st.graph.batchnorm.at(i));
        }
        break;
      case LayerKind::logquant:
      case LayerKind::linearquant:
        if (cfg.activation_q) a = quantize_activation(a, activation_cfg(cfg, l));
        break;
      case LayerKind::softmax:
        break;
    }
  }
  pass.logits = std::move(a);
  return pass;
}

// Mean softmax cross-entropy; writes dL/dlogits into grad.
double softmax_xent(const Activation& logits, std::span<const int> labels, std::vector<double>& grad,
                    std::size_t& correct) {
  const std::size_t n = logits.batch();
  const std::size_t k = logits.per_sample();
  if (labels.size() != n) throw ShapeError("label count does not match the batch");
  grad.assign(n * k, 0.0);
  double loss = 0;
  correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.values.data() + b * k;
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ShapeError("label out of range");
    const double zmax = *std::max_element(z, z + k);
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - z[y];
    std::size_t best = 0;
    for (std::size_t j = 0; j < k; ++j) {
      grad[b * k + j] = std::exp(z[j] - lse) / static_cast<double>(n);
      if (z[j] > z[best]) best = j;
    }
    grad[b * k + static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(n);
    if (best == static_cast<std::size_t>(y)) ++correct;
  }
  return loss / static_cast<double>(n);
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Gradients compute_gradients(TrainState& st, std::span<const double> inputs, std::span<const int> labels,
                            const TrainConfig& cfg) {
  const std::size_t n = labels.size();
  Pass pass = run_forward(st, &st.graph.batchnorm, inputs, n, cfg, true);
  Gradients out;
  std::vector<double> g;
  out.loss = softmax_xent(pass.logits, labels, g, out.correct);
  if (!std::isfinite(out.loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(st.step));
  }

  std::size_t first_param = pass.last;
  for (std::size_t i = 0; i < pass.last; ++i) {
    const LayerKind k = st.graph.layers[i].kind;
    if (k == LayerKind::conv || k == LayerKind::fc || k == LayerKind::batchnorm) {
      first_param = i;
      break;
    }
  }
  const KernelOptions kopts = kernel_options(cfg);

  for (std::size_t i = pass.last; i-- > 0;) {
    const LayerSpec& l = st.graph.layers[i];
    LayerCache& c = pass.caches[i];
    const bool need_input = i > first_param;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc: {
        const std::size_t cols = g.size() / n;
        Operand gop;
        if (cfg.gradient_q) {
          QuantizerConfig q = *cfg.gradient_q;
          q.fsr = covering_fsr(g, cfg.gradient_fsr_floor);
          gop = Operand::quantized(n, cols, g, q);
        } else {
          gop = Operand::real(n, cols, g);
        }
        const Operand& w = pass.wops.at(i);
        LinearGrads lg = l.kind == LayerKind::conv ? conv_backward(gop, w, l.conv_shape(), c.conv, kopts, need_input)
                                                   : fc_backward(gop, w, c.fc, kopts, need_input);
        if (!all_finite(lg.weights)) throw NumericError("non-finite weight gradient in layer " + std::to_string(i));
        out.params[{i, 0}] = std::move(lg.weights);
        g = std::move(lg.input);
        break;
      }
      case LayerKind::relu:
        g = relu_backward(g, c.mask);
        break;
      case LayerKind::maxpool:
        g = maxpool_backward(g, c.pool);
        break;
      case LayerKind::batchnorm: {
        BatchNormGrads bg = batchnorm_backward(g, st.graph.batchnorm.at(i), c.bn);
        out.params[{i, 1}] = std::move(bg.gamma);
        out.params[{i, 2}] = std::move(bg.beta);
        g = std::move(bg.input);
        break;
      }
      case LayerKind::logquant:
      case LayerKind::linearquant:
      case LayerKind::softmax:
        break;  // straight-through
    }
    if (!need_input && i <= first_param) break;
    if (!all_finite(g)) throw NumericError("non-finite gradient below layer " + std::to_string(i));
  }
  return out;
}

StepResult train_minibatch(TrainState& st, std::span<const double> inputs, std::span<const int> labels,
                           const TrainConfig& cfg) {
  if (st.weight_fsr.empty() && cfg.weight_q) refresh_weight_fsr(st, cfg);
  Gradients grads = compute_gradients(st, inputs, labels, cfg);
  const double lr = cfg.learning_rate(st.epoch);
  const std::size_t t = st.step + 1;
  for (auto& [key, g] : grads.params) {
    Moments& mom = st.moments[key];
    if (key.second == 0) {
      optimizer_step(st.weights.at(key.first), g, mom, cfg.optimizer, lr, t);
    } else {
      BatchNormState& bn = st.graph.batchnorm.at(key.first);
      optimizer_step(key.second == 1 ? bn.gamma : bn.beta, g, mom, cfg.optimizer, lr, t);
    }
  }
  for (const auto& [layer, w] : st.weights) {
    if (!all_finite(w)) throw NumericError("non-finite weights in layer " + std::to_string(layer) + " after step " + std::to_string(st.step));
  }
  ++st.step;
  return {grads.loss, grads.correct};
}

EvalResult evaluate(const TrainState& st, const Dataset& data, const TrainConfig& cfg, std::size_t batch_size) {
  EvalResult r;
  if (data.size() == 0) return r;
  std::vector<std::size_t> index;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    index.resize(count);
    std::iota(index.begin(), index.end(), first);
    const std::vector<double> x = data.gather(index);
    Pass pass = run_forward(st, nullptr, x, count, cfg, false);
    std::vector<double> g;
    std::size_t c = 0;
    const double loss = softmax_xent(pass.logits, std::span<const int>(data.labels).subspan(first, count), g, c);
    loss_sum += loss * static_cast<double>(count);
    correct += c;
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

namespace {

// Horizontal flip with p = 0.5 and a shift of up to one pixel (zero fill).
void augment_batch(std::vector<double>& x, std::size_t n, const Shape& sample, Rng& rng) {
  if (sample.size() != 3) return;
  const std::size_t c = sample[0], h = sample[1], w = sample[2];
  std::vector<double> img(c * h * w);
  for (std::size_t b = 0; b < n; ++b) {
    double* s = x.data() + b * c * h * w;
    const bool flip = rng.below(2) == 1;
    const int dy = static_cast<int>(rng.below(3)) - 1;
    const int dx = static_cast<int>(rng.below(3)) - 1;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const int sy = static_cast<int>(y) + dy;
          int sx = static_cast<int>(xx) + dx;
          if (flip) sx = static_cast<int>(w) - 1 - sx;
          double v = 0;
          if (sy >= 0 && sx >= 0 && sy < static_cast<int>(h) && sx < static_cast<int>(w)) {
            v = s[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          }
          img[(ch * h + y) * w + xx] = v;
        }
      }
    }
    std::copy(img.begin(), img.end(), s);
  }
}

}  // namespace

std::vector<EpochMetrics> fit(TrainState& st, const Dataset& train, const Dataset* test, const TrainConfig& cfg,
                              const std::function<void(const EpochMetrics&, const TrainState&)>& on_epoch) {
  cfg.validate();
  train.validate();
  if (test) test->validate();
  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order(train.size());
  std::vector<int> labels;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    refresh_weight_fsr(st, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    st.rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      const std::span<const std::size_t> idx(order.data() + first, count);
      std::vector<double> x = train.gather(idx);
      if (cfg.augment) augment_batch(x, count, train.sample_shape(), st.rng);
      labels.resize(count);
      for (std::size_t b = 0; b < count; ++b) labels[b] = train.labels[idx[b]];
      const StepResult r = train_minibatch(st, x, labels, cfg);
      loss_sum += r.loss * static_cast<double>(count);
      correct += r.correct;
    }
    ++st.epoch;
    EpochMetrics m;
    m.step = st.step;
    m.epoch = st.epoch;
    m.loss = train.size() ? loss_sum / static_cast<double>(train.size()) : 0.0;
    m.train_acc = train.size() ? static_cast<double>(correct) / static_cast<double>(train.size()) : 0.0;
    m.test_acc = test ? evaluate(st, *test, cfg).accuracy : 0.0;
    history.push_back(m);
    if (on_epoch) on_epoch(m, st);
  }
  return history;
}

ModelGraph export_model(const TrainState& st, const TrainConfig& cfg) {
  ModelGraph g = st.graph;
  g.weights.clear();
  for (const auto& [i, w] : st.weights) {
    LayerSpec& l = g.layers[i];
    std::vector<float> v(w.begin(), w.end());
    g.weights[i] = Tensor::real(l.weight_shape(), std::move(v));
    if (cfg.weight_q) {
      QuantizerConfig q = *cfg.weight_q;
      const auto it = st.weight_fsr.find(i);
      q.fsr = it == st.weight_fsr.end() ? covering_fsr(w, cfg.gradient_fsr_floor) : it->second;
      l.quant = q;
    }
  }
  if (cfg.activation_q) {
    g.global_fsr = cfg.activation_q->fsr;
    for (LayerSpec& l : g.layers) {
      if (!l.is_quantizer()) continue;
      l.kind = cfg.activation_q->kind == QuantKind::log ? LayerKind::logquant : LayerKind::linearquant;
      l.quant = *cfg.activation_q;
      l.quant->fsr = g.global_fsr + l.fsr_offset;
    }
  }
  return g;
}

TrainState state_from_model(const ModelGraph& g, const Shape& sample_shape, std::uint64_t seed) {
  TrainState st;
  st.graph = g;
  st.sample_shape = sample_shape;
  st.graph.weights.clear();
  st.rng = Rng(seed);
  for (const auto& [i, t] : g.weights) {
    std::vector<double> w(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) w[j] = t.value_at(j);
    st.weights[i] = std::move(w);
    if (g.layers.at(i).quant) st.weight_fsr[i] = g.layers[i].quant->fsr;
  }
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (g.layers[i].kind == LayerKind::batchnorm && !st.graph.batchnorm.count(i)) {
      st.graph.batchnorm[i] = BatchNormState::identity(g.layers[i].channels);
    }
  }
  return st;
}

}  // namespace lognet

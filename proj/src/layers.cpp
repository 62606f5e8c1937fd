#include "lognet/layers.hpp"

#include <algorithm>
#include <cmath>

#include "lognet/errors.hpp"

namespace lognet {

Activation Activation::real(Shape shape, std::vector<double> values) {
  if (values.size() != shape_size(shape)) throw ShapeError("activation payload does not match " + shape_string(shape));
  Activation a;
  a.shape = std::move(shape);
  a.values = std::move(values);
  return a;
}

Activation Activation::from_tensor(const Tensor& t) {
  Activation a;
  a.shape = t.shape();
  a.values.resize(t.size());
  if (t.is_quantized()) {
    a.codes.assign(t.codes().begin(), t.codes().end());
    a.cfg = t.config();
    for (std::size_t i = 0; i < a.codes.size(); ++i) a.values[i] = dequantize(a.codes[i], *a.cfg);
  } else {
    std::copy(t.values().begin(), t.values().end(), a.values.begin());
  }
  return a;
}

Tensor Activation::to_tensor() const {
  if (is_coded()) return Tensor::quantized(shape, codes, *cfg);
  return Tensor::real(shape, std::vector<float>(values.begin(), values.end()));
}

Operand Activation::as_operand(std::size_t rows, std::size_t cols) const {
  if (rows * cols != values.size()) throw ShapeError("activation cannot be viewed as the requested matrix");
  Operand op;
  op.rows = rows;
  op.cols = cols;
  op.values = values;
  op.codes = codes;
  op.cfg = cfg;
  return op;
}

Activation quantize_activation(const Activation& in, const QuantizerConfig& cfg) {
  Activation out;
  out.shape = in.shape;
  out.cfg = cfg;
  out.codes.reserve(in.values.size());
  out.values.reserve(in.values.size());
  for (double v : in.values) {
    const LogCode c = quantize(v, cfg);
    out.codes.push_back(c);
    out.values.push_back(dequantize(c, cfg));
  }
  return out;
}

// ---- conv ----------------------------------------------------------------

namespace {

void check_nchw(const Shape& s, const char* who) {
  if (s.size() != 4) throw ShapeError(std::string(who) + " expects an NCHW activation, got " + shape_string(s));
}

}  // namespace

Activation conv_forward(const Activation& in, const Operand& weights, const ConvShape& cs,
                        const KernelOptions& opts, ConvCache* cache) {
  check_nchw(in.shape, "conv");
  const std::size_t n = in.shape[0], c = in.shape[1], h = in.shape[2], w = in.shape[3];
  if (c != cs.in_channels) {
    throw ShapeError("conv expects " + std::to_string(cs.in_channels) + " input channels, got " + std::to_string(c));
  }
  if (weights.rows != cs.out_channels || weights.cols != cs.patch()) throw ShapeError("conv weight shape mismatch");
  const Conv2dGeometry& g = cs.geom;
  const std::size_t oh = g.out_h(h), ow = g.out_w(w), p = oh * ow;
  const std::size_t patch = cs.patch();

  Operand patches;
  patches.rows = n * p;
  patches.cols = patch;
  patches.values.assign(patches.rows * patch, 0.0);
  patches.cfg = in.cfg;
  if (in.is_coded()) patches.codes.assign(patches.rows * patch, LogCode::zero());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t row = (b * oh + y) * ow + x;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t src = ((b * c + ci) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
              const std::size_t dst = row * patch + (ci * g.kernel_h + ky) * g.kernel_w + kx;
              patches.values[dst] = in.values[src];
              if (in.is_coded()) patches.codes[dst] = in.codes[src];
            }
          }
        }
      }
    }
  }

  const std::vector<double> prod = gemm_nt(weights, patches, opts);  // OutC x (N*P)
  Activation out;
  out.shape = {n, cs.out_channels, oh, ow};
  out.values.resize(n * cs.out_channels * p);
  for (std::size_t oc = 0; oc < cs.out_channels; ++oc) {
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(prod.begin() + static_cast<std::ptrdiff_t>(oc * n * p + b * p), p,
                  out.values.begin() + static_cast<std::ptrdiff_t>((b * cs.out_channels + oc) * p));
    }
  }
  if (cache) {
    cache->input_shape = in.shape;
    cache->patches = std::move(patches);
  }
  return out;
}

Operand channel_major(const Operand& nchw, std::size_t n, std::size_t c, std::size_t p) {
  if (nchw.values.size() != n * c * p) throw ShapeError("channel_major: size mismatch");
  Operand out;
  out.rows = c;
  out.cols = n * p;
  out.cfg = nchw.cfg;
  out.values.resize(nchw.values.size());
  if (!nchw.codes.empty()) out.codes.resize(nchw.codes.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < p; ++i) {
        const std::size_t src = (b * c + ci) * p + i;
        const std::size_t dst = ci * n * p + b * p + i;
        out.values[dst] = nchw.values[src];
        if (!nchw.codes.empty()) out.codes[dst] = nchw.codes[src];
      }
    }
  }
  return out;
}

LinearGrads conv_backward(const Operand& grad_out, const Operand& weights, const ConvShape& cs,
                          const ConvCache& cache, const KernelOptions& opts, bool need_input_grad) {
  const Shape& s = cache.input_shape;
  if (cache.patches.rows == 0 && s.empty()) throw std::logic_error("conv backward without a forward cache");
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const Conv2dGeometry& g = cs.geom;
  const std::size_t oh = g.out_h(h), ow = g.out_w(w), p = oh * ow;
  const std::size_t patch = cs.patch();
  if (grad_out.values.size() != n * cs.out_channels * p) throw ShapeError("conv gradient shape mismatch");

  const Operand g_cm = channel_major(grad_out, n, cs.out_channels, p);  // OutC x NP
  LinearGrads grads;
  grads.weights = gemm_nt(g_cm, cache.patches.transposed(), opts);  // OutC x patch
  if (!need_input_grad) return grads;

  const std::vector<double> g_rows = gemm_nt(g_cm.transposed(), weights.transposed(), opts);  // NP x patch
  grads.input.assign(n * c * h * w, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t row = (b * oh + y) * ow + x;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              grads.input[((b * c + ci) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                  g_rows[row * patch + (ci * g.kernel_h + ky) * g.kernel_w + kx];
            }
          }
        }
      }
    }
  }
  return grads;
}

// ---- fully connected -----------------------------------------------------

Activation fc_forward(const Activation& in, const Operand& weights, std::size_t out_features,
                      const KernelOptions& opts, FcCache* cache) {
  const std::size_t n = in.batch();
  const std::size_t features = in.per_sample();
  if (weights.cols != features || weights.rows != out_features) {
    throw ShapeError("fc expects " + std::to_string(weights.cols) + " input features, got " + std::to_string(features));
  }
  Operand x = in.as_operand(n, features);
  Activation out = Activation::real({n, out_features}, gemm_nt(x, weights, opts));
  if (cache) {
    cache->input_shape = in.shape;
    cache->input = std::move(x);
  }
  return out;
}

LinearGrads fc_backward(const Operand& grad_out, const Operand& weights, const FcCache& cache,
                        const KernelOptions& opts, bool need_input_grad) {
  if (grad_out.rows != cache.input.rows || grad_out.cols != weights.rows) throw ShapeError("fc gradient shape mismatch");
  LinearGrads grads;
  grads.weights = gemm_nt(grad_out.transposed(), cache.input.transposed(), opts);  // Out x In
  if (need_input_grad) grads.input = gemm_nt(grad_out, weights.transposed(), opts);  // N x In
  return grads;
}

// ---- elementwise / pooling / normalization ---------------------------------

Activation relu_forward(const Activation& in, std::vector<std::uint8_t>* mask) {
  Activation out = in;
  if (mask) mask->assign(in.values.size(), 0);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const bool pass = in.values[i] > 0.0;
    if (mask) (*mask)[i] = pass ? 1 : 0;
    if (!pass) {
      out.values[i] = 0.0;
      if (out.is_coded()) out.codes[i] = LogCode::zero();
    }
  }
  return out;
}

std::vector<double> relu_backward(const std::vector<double>& grad, const std::vector<std::uint8_t>& mask) {
  if (grad.size() != mask.size()) throw ShapeError("relu gradient shape mismatch");
  std::vector<double> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = mask[i] ? grad[i] : 0.0;
  return out;
}

Activation maxpool_forward(const Activation& in, std::size_t k, std::size_t stride, PoolCache* cache) {
  check_nchw(in.shape, "maxpool");
  const std::size_t n = in.shape[0], c = in.shape[1], h = in.shape[2], w = in.shape[3];
  if (k == 0 || stride == 0 || h < k || w < k) throw ShapeError("maxpool window does not fit the input");
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Activation out;
  out.shape = {n, c, oh, ow};
  out.cfg = in.cfg;
  out.values.resize(n * c * oh * ow);
  if (in.is_coded()) out.codes.resize(out.values.size());
  std::vector<std::size_t> argmax(out.values.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = plane * h * w + (y * stride) * w + x * stride;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = plane * h * w + (y * stride + dy) * w + x * stride + dx;
            if (in.values[idx] > in.values[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + y) * ow + x;
        argmax[o] = best;
        out.values[o] = in.values[best];
        if (in.is_coded()) out.codes[o] = in.codes[best];
      }
    }
  }
  if (cache) {
    cache->input_shape = in.shape;
    cache->argmax = std::move(argmax);
  }
  return out;
}

std::vector<double> maxpool_backward(const std::vector<double>& grad, const PoolCache& cache) {
  if (grad.size() != cache.argmax.size()) throw ShapeError("maxpool gradient shape mismatch");
  std::vector<double> out(shape_size(cache.input_shape), 0.0);
  for (std::size_t o = 0; o < grad.size(); ++o) out[cache.argmax[o]] += grad[o];
  return out;
}

BatchNormState BatchNormState::identity(std::size_t channels) {
  BatchNormState s;
  s.gamma.assign(channels, 1.0);
  s.beta.assign(channels, 0.0);
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

namespace {

struct ChannelLayout {
  std::size_t n, c, spatial;
  std::size_t index(std::size_t b, std::size_t ch, std::size_t i) const { return (b * c + ch) * spatial + i; }
};

ChannelLayout channel_layout(const Shape& s, const BatchNormState& state) {
  if (s.size() < 2) throw ShapeError("batchnorm expects N x C [x H x W]");
  ChannelLayout l{s[0], s[1], 1};
  for (std::size_t i = 2; i < s.size(); ++i) l.spatial *= s[i];
  if (l.c != state.channels()) {
    throw ShapeError("batchnorm has " + std::to_string(state.channels()) + " channels, input has " + std::to_string(l.c));
  }
  return l;
}

}  // namespace

Activation batchnorm_forward(const Activation& in, BatchNormState& state, bool training, BatchNormCache* cache) {
  if (!training) return batchnorm_inference(in, state);
  const ChannelLayout l = channel_layout(in.shape, state);
  const auto count = static_cast<double>(l.n * l.spatial);
  Activation out = Activation::real(in.shape, std::vector<double>(in.values.size()));
  std::vector<double> normalized(in.values.size());
  std::vector<double> inv_std(l.c);
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double mean = 0.0;
    for (std::size_t b = 0; b < l.n; ++b)
      for (std::size_t i = 0; i < l.spatial; ++i) mean += in.values[l.index(b, ch, i)];
    mean /= count;
    double var = 0.0;
    for (std::size_t b = 0; b < l.n; ++b) {
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double d = in.values[l.index(b, ch, i)] - mean;
        var += d * d;
      }
    }
    var /= count;
    inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
    for (std::size_t b = 0; b < l.n; ++b) {
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const std::size_t idx = l.index(b, ch, i);
        normalized[idx] = (in.values[idx] - mean) * inv_std[ch];
        out.values[idx] = state.gamma[ch] * normalized[idx] + state.beta[ch];
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    state.running_mean[ch] = (1 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
    state.running_var[ch] = (1 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
  }
  if (cache) {
    cache->shape = in.shape;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Activation batchnorm_inference(const Activation& in, const BatchNormState& state) {
  const ChannelLayout l = channel_layout(in.shape, state);
  Activation out = Activation::real(in.shape, std::vector<double>(in.values.size()));
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    const double inv = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    for (std::size_t b = 0; b < l.n; ++b) {
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const std::size_t idx = l.index(b, ch, i);
        out.values[idx] = state.gamma[ch] * (in.values[idx] - state.running_mean[ch]) * inv + state.beta[ch];
      }
    }
  }
  return out;
}

BatchNormGrads batchnorm_backward(const std::vector<double>& grad, const BatchNormState& state,
                                  const BatchNormCache& cache) {
  const ChannelLayout l = channel_layout(cache.shape, state);
  if (grad.size() != cache.normalized.size()) throw ShapeError("batchnorm gradient shape mismatch");
  const auto count = static_cast<double>(l.n * l.spatial);
  BatchNormGrads g;
  g.input.resize(grad.size());
  g.gamma.assign(l.c, 0.0);
  g.beta.assign(l.c, 0.0);
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t b = 0; b < l.n; ++b) {
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const std::size_t idx = l.index(b, ch, i);
        g.beta[ch] += grad[idx];
        g.gamma[ch] += grad[idx] * cache.normalized[idx];
        const double dxhat = grad[idx] * state.gamma[ch];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * cache.normalized[idx];
      }
    }
    for (std::size_t b = 0; b < l.n; ++b) {
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const std::size_t idx = l.index(b, ch, i);
        const double dxhat = grad[idx] * state.gamma[ch];
        g.input[idx] = cache.inv_std[ch] / count *
                       (count * dxhat - sum_dxhat - cache.normalized[idx] * sum_dxhat_xhat);
      }
    }
  }
  return g;
}

Activation softmax_forward(const Activation& in) {
  const std::size_t n = in.batch();
  const std::size_t k = in.per_sample();
  Activation out = Activation::real(in.shape, std::vector<double>(in.values.size()));
  for (std::size_t b = 0; b < n; ++b) {
    const double* row = in.values.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (out.values[b * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out.values[b * k + j] /= sum;
  }
  return out;
}

}  // namespace lognet

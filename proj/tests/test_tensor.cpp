#include <doctest.h>

#include <random>

#include "lognet/errors.hpp"
#include "lognet/tensor.hpp"

using namespace lognet;

namespace {

std::vector<float> random_values(std::size_t n, std::mt19937_64& rng, float lo = -2.0f, float hi = 2.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction checks the payload length") {
  CHECK_THROWS_AS(Tensor::real({2, 3}, std::vector<float>(5)), ShapeError);
  const Tensor t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK_FALSE(t.is_quantized());
  CHECK_THROWS(t.codes());
  CHECK(shape_string({1, 12, 12}) == "(1,12,12)");
}

TEST_CASE("quantize_tensor examples") {
  const auto cfg = log_config(3, false, 5);
  const Tensor z = quantize_tensor(Tensor::zeros({4}), cfg);
  for (const LogCode& c : z.codes()) CHECK(c.is_zero);
  const Tensor q = quantize_tensor(Tensor::real({2}, {4.0f, 0.9f}), cfg);
  CHECK(q.value_at(0) == 4.0);
  CHECK(q.value_at(1) == 1.0);
  const Tensor s = quantize_tensor(Tensor::real({2, 3}, std::vector<float>(6, 1.0f)), cfg);
  CHECK(s.shape() == Shape{2, 3});
  CHECK_THROWS_AS(quantize_tensor(Tensor::real({1}, {-1.0f}), cfg), DomainError);
}

TEST_CASE("quantize_tensor matches the scalar path") {
  std::mt19937_64 rng(2);
  const Tensor t = Tensor::real({5, 7, 3}, random_values(105, rng, -40.0f, 40.0f));
  for (const auto& cfg : {log_config(5, true, 4), log_config(5, true, 3, 1), linear_config(6, true, 5)}) {
    const Tensor q = quantize_tensor(t, cfg);
    const Tensor d = dequantize_tensor(q);
    for (std::size_t i = 0; i < t.size(); ++i) {
      REQUIRE(q.codes()[i] == quantize(t.values()[i], cfg));
      REQUIRE(d.values()[i] == static_cast<float>(quantize_value(t.values()[i], cfg)));
    }
  }
}

TEST_CASE("im2col geometry") {
  std::mt19937_64 rng(4);
  const Tensor x = Tensor::real({1, 1, 4, 4}, random_values(16, rng));
  const Tensor one = im2col(x, {1, 1, 1, 0});
  CHECK(one.shape() == Shape{1, 16});
  for (std::size_t i = 0; i < 16; ++i) CHECK(one.value_at(i) == x.value_at(i));
  CHECK(im2col(x, {3, 3, 1, 0}).shape() == Shape{9, 4});
  CHECK_THROWS_AS(im2col(x, {5, 5, 1, 0}), ShapeError);
}

TEST_CASE("im2col pads with zeros and zero codes") {
  const auto cfg = log_config(4, false, 2);
  const Tensor x = quantize_tensor(Tensor::real({1, 1, 2, 2}, {1, 1, 1, 1}), cfg);
  const Tensor cols = im2col(x, {3, 3, 1, 1});
  REQUIRE(cols.is_quantized());
  CHECK(cols.shape() == Shape{9, 4});
  // first receptive field: top-left output, kernel row 0 is all padding
  for (std::size_t k = 0; k < 3; ++k) CHECK(cols.codes()[k * 4 + 0].is_zero);
  CHECK_FALSE(cols.codes()[4 * 4 + 0].is_zero);  // kernel centre over x[0,0]
}

TEST_CASE("im2col product equals direct convolution") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial % 2, c = 1 + trial % 3, h = 5 + trial % 3, w = 4 + trial % 4, oc = 2;
    const Conv2dGeometry g{3, 2u + trial % 2u, 1u + trial % 2u, trial % 2u};
    const Tensor x = Tensor::real({n, c, h, w}, random_values(n * c * h * w, rng));
    const auto wt = random_values(oc * c * g.kernel_h * g.kernel_w, rng);
    const Tensor cols = im2col(x, g);
    const std::size_t oh = g.out_h(h), ow = g.out_w(w), patch = c * g.kernel_h * g.kernel_w;
    REQUIRE(cols.shape() == Shape{patch, n * oh * ow});
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            double direct = 0, lowered = 0;
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
                for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                  const long yy = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
                  const long xx = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
                  if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                  direct += wt[((o * c + ci) * g.kernel_h + ki) * g.kernel_w + kj] *
                            x.value_at(((b * c + ci) * h + yy) * w + xx);
                }
            const std::size_t col = (b * oh + i) * ow + j;
            for (std::size_t p = 0; p < patch; ++p) lowered += wt[o * patch + p] * cols.value_at(p * n * oh * ow + col);
            REQUIRE(lowered == doctest::Approx(direct).epsilon(1e-12));
          }
  }
}

}  // TEST_SUITE

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lognet/calib.hpp"
#include "lognet/dataset.hpp"
#include "lognet/errors.hpp"
#include "oracle.hpp"

using namespace lognet;

namespace {

std::vector<double> draw(std::size_t n, std::uint64_t seed, double (*f)(Rng&)) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = f(rng);
  return v;
}

double best_l1(const std::vector<double>& x, QuantizerConfig q) {
  return calibrate(x, q, FsrGrid{-10, 20}).l1;
}

}  // namespace

TEST_SUITE("calib") {

TEST_CASE("powers of two become exactly representable") {
  std::vector<double> x;
  for (int k = 0; k <= 6; ++k) x.push_back(std::ldexp(1.0, k));
  const auto cfg = log_config(3, false, 0);
  const Calibration c = calibrate(x, cfg);
  CHECK(c.fsr == 7);
  CHECK(c.l1 == 0.0);
  // exhaustive oracle over the grid
  int best = 0;
  double best_err = INFINITY;
  for (int fsr = -10; fsr <= 20; ++fsr) {
    auto q = cfg;
    q.fsr = fsr;
    double e = 0;
    for (double v : x) e += std::fabs(oracle::logquant(v, q) - v);
    if (e < best_err) best_err = e, best = fsr;
  }
  CHECK(best == 7);
}

TEST_CASE("all-zero sample picks the grid minimum") {
  const std::vector<double> z(10, 0.0);
  CHECK(calibrate_fsr(z, log_config(4, false, 0), FsrGrid{-3, 9}) == -3);
  CHECK(calibrate_fsr(z, linear_config(4, false, 0), FsrGrid{2, 9}) == 2);
}

TEST_CASE("scaling by two shifts the log FSR by one") {
  const auto x = draw(5000, 3, [](Rng& r) { return r.exponential() * 3.0; });
  std::vector<double> x2(x);
  for (double& v : x2) v *= 2;
  for (int bw : {3, 4, 5}) {
    const auto cfg = log_config(bw, false, 0);
    CHECK(calibrate_fsr(x2, cfg) == calibrate_fsr(x, cfg) + 1);
  }
}

TEST_CASE("chosen FSR is the minimum of the stored candidates") {
  const auto x = draw(3000, 5, [](Rng& r) { return std::fabs(r.normal()) * 4; });
  const Calibration c = calibrate(x, linear_config(4, false, 0), FsrGrid{-4, 10});
  REQUIRE(c.candidates.size() == 15);
  const auto it = std::min_element(c.candidates.begin(), c.candidates.end(),
                                   [](const CandidateError& a, const CandidateError& b) { return a.l1 < b.l1; });
  CHECK(it->fsr == c.fsr);
  CHECK(it->l1 == c.l1);
  for (const CandidateError& e : c.candidates) {
    auto q = linear_config(4, false, e.fsr);
    CHECK(e.l1 == doctest::Approx(quant_error_l1(x, q)).epsilon(1e-12));
  }
}

TEST_CASE("calibration errors") {
  CHECK_THROWS_AS(calibrate(std::vector<double>{}, log_config(4, false, 0)), DomainError);
  CHECK_THROWS_AS(calibrate(std::vector<double>{-1.0}, log_config(4, false, 0)), DomainError);
  CHECK_THROWS_AS(FsrGrid({3, 1}).validate(), ConfigError);
}

TEST_CASE("quant_error_l1 examples") {
  CHECK(quant_error_l1(std::vector<double>{1.0, 4.0, 0.0}, log_config(3, false, 5)) == 0.0);
  CHECK(quant_error_l1(std::vector<double>{1.5}, log_config(3, false, 5)) == 0.5);
  CHECK(std::fabs(oracle::logquant(1.5, log_config(3, false, 5)) - 1.5) == 0.5);
}

TEST_CASE("error histogram") {
  const Histogram exact = error_histogram(std::vector<double>{1.0, 2.0, 0.0}, log_config(3, false, 5), 16);
  CHECK(exact.counts[exact.zero_bin()] == 3);
  CHECK(exact.edges.size() == 17);
  const auto x = draw(10000, 8, [](Rng& r) { return r.normal(); });
  const Histogram h = error_histogram(x, log_config(5, true, 2), 256);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == x.size());
  CHECK(h.edges.front() == -h.edges.back());
  CHECK(std::is_sorted(h.edges.begin(), h.edges.end()));
  CHECK_THROWS(error_histogram(x, log_config(5, true, 2), 7));
}

TEST_CASE("base sqrt2 beats base 2 at 5 bits on Gaussian samples") {
  const auto x = draw(1000000, 13, [](Rng& r) { return r.normal() * 0.05; });
  const double b2 = best_l1(x, log_config(5, true, 0, 0));
  const double s2 = best_l1(x, log_config(5, true, 0, 1));
  MESSAGE("5b L1 base2 " << b2 << " base sqrt2 " << s2 << " ratio " << s2 / b2);
  CHECK(s2 <= 0.6 * b2);
}

TEST_CASE("log beats linear on log-normal samples at 3 and 4 bits") {
  const auto x = draw(1000000, 17, [](Rng& r) { return std::exp(1.5 * r.normal()); });
  for (int bw : {3, 4}) {
    const double lg = best_l1(x, log_config(bw, false, 0));
    const double ln = best_l1(x, linear_config(bw, false, 0));
    MESSAGE(bw << "b L1 log " << lg << " linear " << ln);
    CHECK(lg < ln);
  }
}

TEST_CASE("calibration is permutation invariant") {
  auto x = draw(4001, 19, [](Rng& r) { return r.exponential(); });
  const auto cfg = log_config(4, false, 0);
  const Calibration a = calibrate(x, cfg);
  Rng rng(2);
  rng.shuffle(x);
  const Calibration b = calibrate(x, cfg);
  CHECK(a.fsr == b.fsr);
  for (std::size_t i = 0; i < a.candidates.size(); ++i) CHECK(a.candidates[i].l1 == b.candidates[i].l1);
}

TEST_CASE("calibrate_model writes offsets and weight FSRs") {
  ModelGraph g = make_mlp(6, 8, 3, log_config(4, false, 0));
  g.global_fsr = 1;
  g.layers[0].quant = log_config(5, true, 0);
  g.layers[3].quant = log_config(5, true, 0);
  Rng rng(3);
  std::vector<float> w0(48), w3(24), x(100 * 6);
  for (float& v : w0) v = static_cast<float>(rng.normal() * 4);
  for (float& v : w3) v = static_cast<float>(rng.normal() * 0.1);
  for (float& v : x) v = static_cast<float>(rng.uniform(0, 3));
  g.weights[0] = Tensor::real({8, 6}, w0);
  g.weights[3] = Tensor::real({3, 8}, w3);
  const CalibrationReport rep = calibrate_model(g, Tensor::real({100, 6}, x), FsrGrid{-10, 20});
  REQUIRE(rep.layers.size() == 3);
  for (const LayerCalibration& lc : rep.layers) {
    CHECK(lc.cfg.fsr == lc.search.fsr);
    if (lc.weights) {
      CHECK(g.layers[lc.layer].quant->fsr == lc.cfg.fsr);
    } else {
      CHECK(g.activation_config(lc.layer).fsr == lc.cfg.fsr);
      CHECK(lc.fsr_offset == lc.cfg.fsr - 1);
    }
  }
  // larger weights in layer 0 need a larger FSR
  CHECK(g.layers[0].quant->fsr > g.layers[3].quant->fsr);
  ModelGraph forced = g;
  calibrate_model(forced, Tensor::real({100, 6}, x), FsrGrid{5, 5});
  CHECK(forced.layers[0].quant->fsr == 5);
  CHECK(forced.activation_config(2).fsr == 5);
}

}  // TEST_SUITE

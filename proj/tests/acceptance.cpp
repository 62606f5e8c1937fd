// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Criteria can be selected by number:
//   acceptance 1 3 8

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cli.hpp"
#include "lognet/calib.hpp"
#include "lognet/io.hpp"
#include "lognet/train.hpp"
#include "oracle.hpp"

using namespace lognet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---- 1: quantizer oracle equivalence ----------------------------------------

std::vector<double> quantizer_grid() {
  constexpr std::size_t kPoints = 100000;
  std::set<double> pts;
  // thresholds: octave and half-octave edges and the rounding boundaries between them
  for (int k = -74; k <= 18; ++k) {
    for (double t : {1.0, std::exp2(0.25), std::sqrt(2.0), std::exp2(0.75)}) {
      const double b = std::ldexp(t, k);
      pts.insert(b);
      pts.insert(std::nextafter(b, 0.0));
      pts.insert(std::nextafter(b, 1e300));
    }
  }
  // linear ties and clip edges
  for (int fsr = -8; fsr <= 16; ++fsr)
    for (int m = 1; m <= 6; ++m)
      for (int k = 0; k <= (1 << m) + 1; ++k) {
        pts.insert(std::ldexp(k + 0.5, fsr - m));
        pts.insert(std::ldexp(static_cast<double>(k), fsr - m));
      }
  pts.erase(0.0);
  std::mt19937_64 rng(20240101);
  std::uniform_real_distribution<double> e(-74.0, 18.0);
  // evenly spaced in log2, then seeded log-uniform fill
  const std::size_t even = 60000;
  for (std::size_t i = 0; i < even && pts.size() < kPoints - 1; ++i) {
    pts.insert(std::exp2(-74.0 + 92.0 * static_cast<double>(i) / static_cast<double>(even - 1)));
  }
  while (pts.size() < kPoints - 1) pts.insert(std::exp2(e(rng)));
  std::vector<double> out(pts.begin(), pts.end());
  out.insert(out.begin(), 0.0);
  return out;
}

Outcome criterion1() {
  const std::vector<double> xs = quantizer_grid();
  std::vector<oracle::LogGrid> g2(xs.size()), gs(xs.size());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    g2[i] = oracle::log_grid(xs[i], 0);
    gs[i] = oracle::log_grid(xs[i], 1);
  }
  std::size_t configs = 0, checks = 0, mismatches = 0;
  std::string first;
  auto note = [&](const QuantizerConfig& c, double x, double got, double want) {
    if (mismatches++ == 0) first = c.describe() + " x=" + fmt(x, 17) + " got " + fmt(got, 17) + " want " + fmt(want, 17);
  };
  for (int bw = 1; bw <= 6; ++bw)
    for (bool s : {false, true}) {
      if (s && bw < 2) continue;
      for (int fsr = -8; fsr <= 16; ++fsr) {
        for (int bf = 0; bf <= 1; ++bf)
          for (Rounding r : {Rounding::floor_msb, Rounding::round_nearest_sqrt2}) {
            const QuantizerConfig c = log_config(bw, s, fsr, bf, r);
            ++configs;
            const auto& grid = bf ? gs : g2;
            for (std::size_t i = 0; i < xs.size(); ++i) {
              const double want = oracle::logquant_from_grid(xs[i], grid[i], c);
              const double got = quantize_value(xs[i], c);
              ++checks;
              if (got != want) note(c, xs[i], got, want);
              if (s) {
                ++checks;
                const double gn = quantize_value(-xs[i], c);
                if (gn != -want) note(c, -xs[i], gn, -want);
              }
            }
          }
        const QuantizerConfig lc = linear_config(bw, s, fsr);
        ++configs;
        for (double x : xs) {
          ++checks;
          const double want = oracle::linquant(x, lc);
          const double got = linquant(x, lc).value;
          if (got != want) note(lc, x, got, want);
          if (s) {
            ++checks;
            const double gn = linquant(-x, lc).value;
            if (gn != -want) note(lc, -x, gn, -want);
          }
        }
      }
    }
  Outcome o;
  o.pass = mismatches == 0;
  o.detail = std::to_string(configs) + " configs, " + std::to_string(xs.size()) + " inputs, " + std::to_string(checks) +
             " comparisons, " + std::to_string(mismatches) + " mismatches";
  if (!first.empty()) o.detail += "; first: " + first;
  return o;
}

// ---- 2: log-accumulation bound ----------------------------------------------

Outcome criterion2() {
  constexpr int f = 4;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> base(-32 << f, 32 << f), diff(-16 << f, 16 << f), seq(-8 << f, 8 << f);
  double pair_worst = 0;
  for (int i = 0; i < 100000; ++i) {
    const std::int64_t a = base(rng), b = a + diff(rng);
    const std::vector<ExponentWord> p{ExponentWord::from_raw(a, f), ExponentWord::from_raw(b, f)};
    const double exact = oracle::log2_sum(std::vector<double>{p[0].to_double(), p[1].to_double()});
    pair_worst = std::max(pair_worst, std::fabs(log_accumulate(p).to_double() - exact));
  }
  double step_worst = 0, total_worst = 0;
  for (int s = 0; s < 10000; ++s) {
    std::vector<ExponentWord> p;
    std::vector<double> pd;
    for (int i = 0; i < 64; ++i) {
      p.push_back(ExponentWord::from_raw(seq(rng), f));
      pd.push_back(p.back().to_double());
    }
    double prev = pd[0];
    for (std::size_t n = 2; n <= 64; ++n) {
      const double sn = log_accumulate(std::span<const ExponentWord>(p.data(), n)).to_double();
      const double exact_step = oracle::log2_sum(std::vector<double>{prev, pd[n - 1]});
      step_worst = std::max(step_worst, std::fabs(sn - exact_step));
      prev = sn;
    }
    total_worst = std::max(total_worst, std::fabs(prev - oracle::log2_sum(pd)));
  }
  Outcome o;
  o.pass = pair_worst <= 0.15 && step_worst <= 0.15 && total_worst <= 64 * 0.15;
  o.detail = "max pair error " + fmt(pair_worst) + ", max per-step error " + fmt(step_worst) +
             " (bound 0.15), max length-64 error " + fmt(total_worst) + " (bound 9.6)";
  return o;
}

// ---- 3: multiplier-free exactness -------------------------------------------

LogCode code_at(std::int64_t units, const QuantizerConfig& cfg, int sign) {
  const std::int64_t c = units - static_cast<std::int64_t>(cfg.fsr) * cfg.grid_per_octave() + cfg.levels() + 1;
  return LogCode::make(sign, static_cast<std::uint16_t>(c));
}

Outcome criterion3() {
  std::mt19937_64 rng(3);
  struct Setup {
    QuantizerConfig w, x;
  };
  const std::vector<Setup> setups{{log_config(5, true, 2), log_config(4, false, 3)},
                                  {log_config(4, true, 0), log_config(3, false, 6)},
                                  {log_config(6, true, 8, 1), log_config(5, false, 2, 1)}};
  std::size_t cases = 0, bad1 = 0, bad2 = 0;
  for (int t = 0; t < 10000; ++t) {
    const Setup& s = setups[static_cast<std::size_t>(t) % setups.size()];
    const int n = std::uniform_int_distribution<int>(1, 64)(rng);
    std::vector<double> wreal, wq, xv;
    std::vector<LogCode> wc, xc;
    const int per_w = s.w.grid_per_octave(), per_x = s.x.grid_per_octave();
    for (int i = 0; i < n; ++i) {
      const int sign = std::uniform_int_distribution<int>(0, 1)(rng) ? -1 : 1;
      const bool zero = std::uniform_int_distribution<int>(0, 9)(rng) == 0;
      // integer exponents only: every operand is +-2^k
      std::int64_t xe, we;
      do {
        xe = std::uniform_int_distribution<std::int64_t>(s.x.bottom_exponent_units(), s.x.top_exponent_units())(rng);
      } while (xe % per_x);
      do {
        we = std::uniform_int_distribution<std::int64_t>(s.w.bottom_exponent_units(), s.w.top_exponent_units())(rng);
      } while (we % per_w);
      xc.push_back(zero ? LogCode::zero() : code_at(xe, s.x, 1));
      xv.push_back(zero ? 0.0 : std::ldexp(1.0, static_cast<int>(xe / per_x)));
      wc.push_back(code_at(we, s.w, sign));
      wq.push_back(sign * std::ldexp(1.0, static_cast<int>(we / per_w)));
      wreal.push_back(sign * std::ldexp(1.0, std::uniform_int_distribution<int>(-6, 10)(rng)));
    }
    ++cases;
    // 2^-6 weights times 2^-12 activations: 18 fraction bits
    const FixedFormat f1{24, 36};
    if (dot_method1(wreal, xc, s.x, f1).to_double() != oracle::dot(wreal, xv)) ++bad1;
    const FixedFormat f2 = method2_format(s.w, s.x, static_cast<std::size_t>(n));
    if (dot_method2(wc, xc, s.w, s.x, AccumMode::linear, f2).to_double() != oracle::dot(wq, xv)) ++bad2;
  }
  Outcome o;
  o.pass = bad1 == 0 && bad2 == 0;
  o.detail = std::to_string(cases) + " cases, method1 mismatches " + std::to_string(bad1) + ", method2 mismatches " +
             std::to_string(bad2);
  return o;
}

// ---- 4 and 5: quantization error comparisons -----------------------------------

Outcome criterion4() {
  Rng rng(4);
  std::vector<double> x(1000000);
  for (double& v : x) v = rng.exponential();
  const double mx = *std::max_element(x.begin(), x.end());
  for (double& v : x) v *= 128.0 / mx;
  Outcome o;
  o.pass = true;
  for (int bw : {3, 4}) {
    const Calibration lg = calibrate(x, log_config(bw, false, 0));
    const Calibration ln = calibrate(x, linear_config(bw, false, 0));
    o.pass = o.pass && lg.l1 < ln.l1;
    o.detail += (o.detail.empty() ? "" : "; ") + std::to_string(bw) + "b log L1 " + fmt(lg.l1) + " (fsr " +
                std::to_string(lg.fsr) + ") vs linear " + fmt(ln.l1) + " (fsr " + std::to_string(ln.fsr) + ")";
  }
  return o;
}

Outcome criterion5() {
  Rng rng(5);
  std::vector<double> x(1000000);
  for (double& v : x) v = 0.05 * rng.normal();
  const Calibration b2 = calibrate(x, log_config(5, true, 0, 0));
  const Calibration s2 = calibrate(x, log_config(5, true, 0, 1));
  Outcome o;
  o.pass = s2.l1 <= 0.6 * b2.l1;
  o.detail = "5b L1 base sqrt2 " + fmt(s2.l1) + " vs base 2 " + fmt(b2.l1) + ", ratio " + fmt(s2.l1 / b2.l1) +
             " (bound 0.6)";
  return o;
}

// ---- 6: quantized training convergence -------------------------------------

Outcome criterion6() {
  ImageSetOptions io;
  io.samples = 10000;
  io.size = 12;
  io.noise = 0.7;
  io.seed = 11;
  const Dataset all = make_image_set(io);
  const Dataset train = all.subset(0, 8000), test = all.subset(8000, 2000);
  CnnOptions arch;
  arch.activation = log_config(4, false, 3);
  TrainConfig quant;
  quant.weight_q = log_config(5, true, 0);
  quant.activation_q = log_config(4, false, 3);
  quant.gradient_q = log_config(5, true, 0);
  quant.optimizer.rule = OptimizerConfig::Rule::adam;
  quant.optimizer.lr = 0.002;
  quant.batch_size = 32;
  quant.epochs = 10;
  TrainConfig plain = quant;
  plain.weight_q.reset();
  plain.activation_q.reset();
  plain.gradient_q.reset();

  Outcome o;
  o.pass = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    double acc[2];
    for (int q = 0; q < 2; ++q) {
      TrainConfig c = q ? quant : plain;
      c.seed = seed;
      TrainState st = init_state(make_small_cnn(arch), {1, 12, 12}, seed);
      const auto hist = fit(st, train, &test, c);
      acc[q] = hist.back().test_acc;
    }
    const double gap = acc[0] - acc[1];
    o.pass = o.pass && std::fabs(gap) <= 0.03;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": float " +
                fmt(acc[0], 4) + " log " + fmt(acc[1], 4) + " gap " + fmt(100 * gap, 3) + "pp";
  }
  return o;
}

// ---- 7: gradient check ----------------------------------------------------------

Outcome criterion7() {
  CnnOptions arch;
  arch.image = 8;
  arch.conv1 = 2;
  arch.conv2 = 3;
  arch.hidden = 6;
  arch.classes = 3;
  TrainState st = init_state(make_small_cnn(arch), {1, 8, 8}, 21);
  Rng rng(8);
  for (auto& [i, bn] : st.graph.batchnorm) {
    for (double& g : bn.gamma) g = rng.uniform(0.5, 1.5);
    for (double& b : bn.beta) b = rng.uniform(-0.2, 0.2);
  }
  const TrainConfig c;  // unquantized
  std::vector<double> x(4 * 64);
  for (double& v : x) v = rng.normal();
  const std::vector<int> y{0, 2, 1, 2};
  const Gradients g = compute_gradients(st, x, y, c);
  const double h = 1e-5;
  double worst = 0;
  std::size_t params = 0;
  for (const auto& [key, grad] : g.params) {
    std::vector<double>& p = key.second == 0 ? st.weights.at(key.first)
                             : key.second == 1 ? st.graph.batchnorm.at(key.first).gamma
                                               : st.graph.batchnorm.at(key.first).beta;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = compute_gradients(st, x, y, c).loss;
      p[i] = keep - h;
      const double down = compute_gradients(st, x, y, c).loss;
      p[i] = keep;
      const double fd = (up - down) / (2 * h);
      num += (grad[i] - fd) * (grad[i] - fd);
      den += fd * fd;
      ++params;
    }
    if (den > 0) worst = std::max(worst, std::sqrt(num / den));
  }
  Outcome o;
  o.pass = worst <= 1e-3;
  o.detail = std::to_string(params) + " parameters in " + std::to_string(g.params.size()) +
             " tensors, worst relative error " + fmt(worst) + " (bound 1e-3)";
  return o;
}

// ---- 8: compression ---------------------------------------------------------------

Outcome criterion8() {
  ModelGraph g;
  g.layers = {LayerSpec::fc(4096, 1000)};
  g.layers[0].quant = log_config(4, true, 0);
  Rng rng(9);
  std::vector<float> w(4096 * 1000);
  for (float& v : w) v = static_cast<float>(0.02 * rng.normal());
  g.weights[0] = Tensor::real({1000, 4096}, w);
  const double f32 = static_cast<double>(serialize_model(g).size());
  const double packed = static_cast<double>(serialize_model(quantize_weights(g)).size());
  const double ratio = f32 / packed;
  Outcome o;
  o.pass = std::fabs(ratio - 8.0) < 0.08;
  o.detail = "f32 " + std::to_string(static_cast<long>(f32)) + " bytes, packed " +
             std::to_string(static_cast<long>(packed)) + " bytes, ratio " + fmt(ratio, 8) + " (8.0 +- 1%)";
  return o;
}

// ---- 9: determinism ---------------------------------------------------------------

Outcome criterion9() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("lognet_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  auto run = [](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) throw std::runtime_error("lognet " + args[0] + " failed: " + err.str());
  };
  Outcome o;
  try {
    const std::string common =
        "train_samples = 1000\ntest_samples = 200\nimage_size = 8\nhidden = 32\nepochs = 2\nseed = 5\naugment = true\n";
    std::ofstream(dir / "a.cfg") << common << "checkpoint = a.logn\nmetrics = a.csv\n";
    std::ofstream(dir / "b.cfg") << common << "checkpoint = b.logn\nmetrics = b.csv\n";
    run({"train", (dir / "a.cfg").string()});
    run({"train", (dir / "b.cfg").string()});
    run({"gen-data", "--samples", "300", "--size", "8", "--seed", "3", "--images", (dir / "x.idx").string(), "--labels",
         (dir / "y.idx").string()});
    for (const char* name : {"s1.csv", "s2.csv"}) {
      run({"sweep", "--model", (dir / "a.logn").string(), "--images", (dir / "x.idx").string(), "--labels",
           (dir / "y.idx").string(), "--mode", "method2_base2", "--bitwidths", "3,4", "--fsr-range", "-2:5", "--out",
           (dir / name).string()});
    }
    const bool train_same = slurp(dir / "a.csv") == slurp(dir / "b.csv") && !slurp(dir / "a.csv").empty();
    const bool ckpt_same = slurp(dir / "a.logn") == slurp(dir / "b.logn");
    const bool sweep_same = slurp(dir / "s1.csv") == slurp(dir / "s2.csv") && !slurp(dir / "s1.csv").empty();
    o.pass = train_same && sweep_same && ckpt_same;
    o.detail = std::string("train metrics ") + (train_same ? "identical" : "differ") + ", checkpoints " +
               (ckpt_same ? "identical" : "differ") + ", sweep ";
    o.detail += sweep_same ? "identical" : "differ";
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = e.what();
  }
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"quantizer oracle equivalence", criterion1},
      {"log-accumulation error bound", criterion2},
      {"multiplier-free exactness on power-of-two operands", criterion3},
      {"log beats linear at 3b and 4b on Exp(1) samples", criterion4},
      {"base sqrt2 L1 <= 0.6x base 2 at 5b", criterion5},
      {"quantized CNN within 3pp of float after 10 epochs, 3 seeds", criterion6},
      {"gradient check against finite differences", criterion7},
      {"packed 4b FC weights 8x smaller than f32", criterion8},
      {"deterministic train and sweep CSVs", criterion9},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d: %s  %s [%s] (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}

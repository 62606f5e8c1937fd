#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "lognet/errors.hpp"
#include "lognet/io.hpp"

using namespace lognet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("lognet_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    out.push_back(l);
  }
  return out;
}

void write_text(const std::string& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

// Trains a small CNN on synthetic images; returns the checkpoint path.
std::string trained_model(const TempDir& d, std::size_t epochs = 3) {
  write_text(d / "job.cfg",
             "train_samples = 1500\ntest_samples = 0\nimage_size = 8\nnoise = 0.4\nhidden = 32\nepochs = " +
                 std::to_string(epochs) + "\ncheckpoint = model.logn\nmetrics = m.csv\n");
  REQUIRE(run_cli({"train", d / "job.cfg"}).code == 0);
  return d / "model.logn";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("key=value parsing") {
  const auto kv = cli::parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "two");
  CHECK_THROWS_AS(cli::parse_key_values("novalue\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_key_values("a=1\na=2\n"), ConfigError);
}

TEST_CASE("train job errors name the key") {
  auto message = [](const std::string& text) {
    try {
      cli::parse_train_job(cli::parse_key_values(text), ".");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("epochs = x\n").find("epochs") != std::string::npos);
  CHECK(message("bogus = 1\n").find("bogus") != std::string::npos);
  CHECK(message("weight_bits = 1\n").find("weight_bits") != std::string::npos);
  CHECK(message("optimizer = rmsprop\n").find("optimizer") != std::string::npos);
  const cli::TrainJob j = cli::parse_train_job(cli::parse_key_values("checkpoint = c.logn\n"), "/base");
  CHECK(j.checkpoint == fs::path("/base/c.logn"));
  CHECK(j.config.weight_q->bitwidth == 5);
  CHECK(j.config.activation_q->bitwidth == 4);
  CHECK(j.config.gradient_q->bitwidth == 5);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"calibrate"}).code == 2);
}

TEST_CASE("missing files exit 2 with cannot open") {
  TempDir d;
  const Run r = run_cli({"calibrate", "--model", d / "none.logn", "--images", d / "none.idx", "--out", d / "o.logn", "--csv",
                     d / "o.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("cannot open") != std::string::npos);
}

TEST_CASE("calibrate writes offsets and one CSV row per layer and candidate") {
  TempDir d;
  REQUIRE(run_cli({"gen-data", "--kind", "separable", "--samples", "150", "--dims", "4", "--images", d / "x.idx", "--labels",
               d / "y.idx"})
              .code == 0);
  REQUIRE(run_cli({"init-model", "--arch", "mlp", "--inputs", "4", "--hidden", "6", "--classes", "2", "--out",
               d / "m.logn"})
              .code == 0);
  const Run r = run_cli({"calibrate", "--model", d / "m.logn", "--images", d / "x.idx", "--out", d / "c.logn", "--csv",
                     d / "c.csv", "--fsr-grid", "-4:6"});
  REQUIRE(r.code == 0);
  const auto rows = lines(slurp(d / "c.csv"));
  CHECK(rows[0] == "layer,target,kind,bitwidth,fsr,l1,chosen");
  CHECK(rows.size() == 1 + 3 * 11);  // two weight quantizers and one activation quantizer
  const ModelGraph g = read_model(d / "c.logn");
  std::size_t chosen = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) chosen += rows[i].back() == '1';
  CHECK(chosen == 3);

  REQUIRE(run_cli({"calibrate", "--model", d / "m.logn", "--images", d / "x.idx", "--out", d / "f.logn", "--csv",
               d / "f.csv", "--fsr-grid", "5:5"})
              .code == 0);
  const ModelGraph f = read_model(d / "f.logn");
  for (std::size_t i = 0; i < f.layers.size(); ++i) {
    if (f.layers[i].has_weights()) CHECK(f.layers[i].quant->fsr == 5);
    if (f.layers[i].is_quantizer()) CHECK(f.activation_config(i).fsr == 5);
  }
}

TEST_CASE("sweep") {
  TempDir d;
  const std::string model = trained_model(d, 1);
  REQUIRE(run_cli({"gen-data", "--samples", "200", "--size", "8", "--noise", "0.4", "--seed", "11", "--images",
               d / "x.idx", "--labels", d / "y.idx"})
              .code == 0);
  const Run f = run_cli({"sweep", "--model", model, "--images", d / "x.idx", "--labels", d / "y.idx", "--mode", "float32",
                     "--bitwidths", "3", "--fsr-range", "-2:4", "--out", d / "s.csv"});
  REQUIRE(f.code == 0);
  const auto rows = lines(slurp(d / "s.csv"));
  REQUIRE(rows.size() == 8);
  CHECK(rows[0] == "bitwidth,fsr,top1,top5");
  for (std::size_t i = 2; i < rows.size(); ++i) CHECK(rows[i].substr(rows[i].find(',', 2)) == rows[1].substr(rows[1].find(',', 2)));

  const Run q = run_cli({"sweep", "--model", model, "--images", d / "x.idx", "--labels", d / "y.idx", "--mode",
                     "method2_base2", "--bitwidths", "3,4", "--fsr-range", "-2:6", "--out", d / "q.csv"});
  REQUIRE(q.code == 0);
  const auto qrows = lines(slurp(d / "q.csv"));
  CHECK(qrows.size() == 1 + 2 * 9);
  CHECK(run_cli({"sweep", "--model", model, "--images", d / "x.idx", "--labels", d / "y.idx", "--fsr-range", "4:1"}).code == 2);
}

TEST_CASE("train") {
  TempDir d;
  write_text(d / "zero.cfg", "epochs = 0\ncheckpoint = z.logn\nmetrics = z.csv\ntrain_samples = 100\ntest_samples = 10\n");
  REQUIRE(run_cli({"train", d / "zero.cfg"}).code == 0);
  CHECK(fs::exists(d / "z.logn"));
  CHECK(slurp(d / "z.csv") == "step,epoch,loss,train_acc,test_acc\r\n");

  const std::string base = "train_samples = 300\ntest_samples = 100\nimage_size = 8\nepochs = 2\nseed = 4\n";
  write_text(d / "a.cfg", base + "checkpoint = a.logn\nmetrics = a.csv\n");
  write_text(d / "b.cfg", base + "checkpoint = b.logn\nmetrics = b.csv\n");
  REQUIRE(run_cli({"train", d / "a.cfg"}).code == 0);
  REQUIRE(run_cli({"train", d / "b.cfg"}).code == 0);
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
  CHECK(slurp(d / "a.logn") == slurp(d / "b.logn"));
  CHECK(lines(slurp(d / "a.csv")).size() == 3);

  write_text(d / "lin.cfg", base +
                                "weight_quant = linear\nactivation_quant = linear\nactivation_fsr = 3\n"
                                "gradient_quant = none\ncheckpoint = l.logn\nmetrics = l.csv\n");
  REQUIRE(run_cli({"train", d / "lin.cfg"}).code == 0);
  CHECK(lines(slurp(d / "l.csv")).size() == 3);
  const ModelGraph lg = read_model(d / "l.logn");
  CHECK(lg.layers[3].kind == LayerKind::linearquant);

  write_text(d / "bad.cfg", "epochs = 1\nlearning_rate = 0.1\n");
  const Run bad = run_cli({"train", d / "bad.cfg"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("learning_rate") != std::string::npos);
}

TEST_CASE("train stops on NaN and keeps the last good checkpoint") {
  TempDir d;
  write_text(d / "nan.cfg",
             "train_samples = 200\ntest_samples = 0\nimage_size = 8\nepochs = 3\noptimizer = sgd\nlr = 1e200\n"
             "weight_quant = none\nactivation_quant = none\ngradient_quant = none\n");
  const Run r = run_cli({"train", d / "nan.cfg"});
  CHECK(r.code == 1);
  CHECK(r.err.find("checkpoint") != std::string::npos);
  CHECK_NOTHROW(read_model(d / "checkpoint.logn"));
}

TEST_CASE("infer") {
  TempDir d;
  const std::string model = trained_model(d);
  REQUIRE(run_cli({"gen-data", "--samples", "400", "--size", "8", "--noise", "0.4", "--seed", "11", "--images",
               d / "x.idx", "--labels", d / "y.idx"})
              .code == 0);
  const Run f = run_cli({"infer", "--model", model, "--images", d / "x.idx", "--labels", d / "y.idx", "--out", d / "p.csv",
                     "--mode", "method2_base2", "--compare-float"});
  REQUIRE(f.code == 0);
  const auto rows = lines(slurp(d / "p.csv"));
  CHECK(rows.size() == 401);
  CHECK(rows[0] == "index,predicted,label");
  CHECK(f.out.find("us/sample") != std::string::npos);
  const auto at = f.out.find("argmax agreement ");
  REQUIRE(at != std::string::npos);
  const double agree = std::stod(f.out.substr(at + 17));
  MESSAGE("method2 vs float32 argmax agreement " << agree);
  CHECK(agree >= 0.95);

  IdxArray empty;
  empty.type = IdxType::f32;
  empty.dims = {0, 8, 8};
  write_file(d / "e.idx", serialize_idx(empty));
  const Run e = run_cli({"infer", "--model", model, "--images", d / "e.idx", "--out", d / "e.csv"});
  CHECK(e.code == 0);
  CHECK(slurp(d / "e.csv") == "index,predicted,label\r\n");

  const Run u = run_cli({"infer", "--model", model, "--images", d / "x.idx", "--out", d / "u.csv", "--mode", "fast"});
  CHECK(u.code == 2);
  CHECK(u.err.find("method2_sqrt2") != std::string::npos);
}

TEST_CASE("pack and quant-analyze") {
  TempDir d;
  REQUIRE(run_cli({"init-model", "--out", d / "m.logn"}).code == 0);
  const Run p = run_cli({"pack", "--model", d / "m.logn", "--out", d / "p.logn"});
  REQUIRE(p.code == 0);
  CHECK(p.out.find("ratio") != std::string::npos);
  CHECK(fs::file_size(d / "p.logn") < fs::file_size(d / "m.logn") / 5);
  REQUIRE(run_cli({"pack", "--model", d / "p.logn", "--out", d / "u.logn", "--unpack"}).code == 0);
  CHECK(read_model(d / "u.logn").weights.begin()->second.is_quantized() == false);

  const Run q = run_cli({"quant-analyze", "--dist", "lognormal", "--samples", "5000", "--bits", "4", "--csv", d / "h.csv"});
  REQUIRE(q.code == 0);
  CHECK(q.out.find("mean L1 error") != std::string::npos);
  const auto rows = lines(slurp(d / "h.csv"));
  CHECK(rows.size() == 257);
  CHECK(rows[0] == "bin,lo,hi,count");
  std::size_t total = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) total += std::stoul(rows[i].substr(rows[i].rfind(',') + 1));
  CHECK(total == 5000);
  CHECK(run_cli({"quant-analyze", "--dist", "cauchy"}).code == 2);
}

}  // TEST_SUITE

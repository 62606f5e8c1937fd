#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lognet/calib.hpp"
#include "lognet/errors.hpp"
#include "lognet/io.hpp"

namespace lognet::cli {

namespace fs = std::filesystem;

// ---- key=value config ------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
  }
  return kv;
}

namespace {

class KeyReader {
 public:
  explicit KeyReader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& def) {
    used_.push_back(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  long long integer(const std::string& key, long long def) {
    const std::string v = str(key, "");
    if (v.empty()) return def;
    try {
      std::size_t pos = 0;
      const long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
  }

  std::size_t count(const std::string& key, std::size_t def) {
    const long long x = integer(key, static_cast<long long>(def));
    if (x < 0) throw ConfigError("key '" + key + "': must be non-negative");
    return static_cast<std::size_t>(x);
  }

  double number(const std::string& key, double def) {
    const std::string v = str(key, "");
    if (v.empty()) return def;
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
  }

  bool flag(const std::string& key, bool def) {
    const std::string v = str(key, "");
    if (v.empty()) return def;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
  }

  std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& allowed) {
    const std::string v = str(key, def);
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("key '" + key + "': '" + v + "' is not one of " + list);
    }
    return v;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : kv_) {
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) throw ConfigError("unknown key '" + k + "'");
    }
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::vector<std::string> used_;
};

std::optional<QuantizerConfig> read_quantizer(KeyReader& r, const std::string& prefix, const std::string& def_kind,
                                              int def_bits, bool is_signed, int def_fsr) {
  const std::string kind = r.choice(prefix + "_quant", def_kind, {"log", "linear", "none"});
  const int bits = static_cast<int>(r.integer(prefix + "_bits", def_bits));
  const std::string base = r.choice(prefix + "_base", "2", {"2", "sqrt2"});
  const std::string rounding = r.choice(prefix + "_rounding", "nearest", {"nearest", "floor"});
  const int fsr = static_cast<int>(r.integer(prefix + "_fsr", def_fsr));
  if (kind == "none") return std::nullopt;
  try {
    QuantizerConfig q = kind == "log" ? log_config(bits, is_signed, fsr, base == "sqrt2" ? 1 : 0,
                                                   rounding == "floor" ? Rounding::floor_msb
                                                                       : Rounding::round_nearest_sqrt2)
                                      : linear_config(bits, is_signed, fsr);
    q.validate();
    return q;
  } catch (const ConfigError& e) {
    throw ConfigError("key '" + prefix + "_bits': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

TrainJob parse_train_job(const std::map<std::string, std::string>& kv, const fs::path& base) {
  KeyReader r(kv);
  TrainJob job;
  job.dataset = r.choice("dataset", "synthetic", {"synthetic", "separable", "idx"});
  job.train_images = resolve(base, r.str("train_images", ""));
  job.train_labels = resolve(base, r.str("train_labels", ""));
  job.test_images = resolve(base, r.str("test_images", ""));
  job.test_labels = resolve(base, r.str("test_labels", ""));
  job.train_samples = r.count("train_samples", job.train_samples);
  job.test_samples = r.count("test_samples", job.test_samples);
  job.noise = r.number("noise", job.noise);
  job.image_size = r.count("image_size", job.image_size);
  job.dims = r.count("dims", job.dims);
  job.data_seed = static_cast<std::uint64_t>(r.count("data_seed", job.data_seed));
  job.model = r.str("model", job.model);
  job.hidden = static_cast<std::uint32_t>(r.count("hidden", job.hidden));

  TrainConfig& c = job.config;
  c.weight_q = read_quantizer(r, "weight", "log", 5, true, 0);
  c.activation_q = read_quantizer(r, "activation", "log", 4, false, 3);
  c.gradient_q = read_quantizer(r, "gradient", "log", 5, true, 0);
  c.gradient_fsr_floor = static_cast<int>(r.integer("gradient_fsr_floor", c.gradient_fsr_floor));
  const std::string opt = r.choice("optimizer", "adam", {"sgd", "adam"});
  c.optimizer.rule = opt == "sgd" ? OptimizerConfig::Rule::sgd_momentum : OptimizerConfig::Rule::adam;
  c.optimizer.lr = r.number("lr", opt == "sgd" ? 0.02 : 0.002);
  c.optimizer.momentum = r.number("momentum", c.optimizer.momentum);
  c.optimizer.beta1 = r.number("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = r.number("beta2", c.optimizer.beta2);
  c.optimizer.eps = r.number("eps", c.optimizer.eps);
  c.lr_step_epochs = r.count("lr_step_epochs", c.lr_step_epochs);
  c.lr_decay = r.number("lr_decay", c.lr_decay);
  c.batch_size = r.count("batch_size", c.batch_size);
  c.epochs = r.count("epochs", c.epochs);
  c.seed = static_cast<std::uint64_t>(r.count("seed", c.seed));
  c.augment = r.flag("augment", c.augment);
  job.checkpoint = resolve(base, r.str("checkpoint", job.checkpoint.string()));
  job.metrics = resolve(base, r.str("metrics", job.metrics.string()));
  job.checkpoint_every = r.count("checkpoint_every", job.checkpoint_every);
  r.reject_unknown();

  if (job.dataset == "idx" && (job.train_images.empty() || job.train_labels.empty())) {
    throw ConfigError("key 'train_images': required when dataset = idx");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("quantizer keys: ") + e.what());
  }
  return job;
}

// ---- shared helpers ----------------------------------------------------------

namespace {

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_range(const std::string& text, const std::string& what) {
  const auto colon = text.find(':');
  try {
    std::size_t p1 = 0, p2 = 0;
    if (colon == std::string::npos) {
      const int v = std::stoi(text, &p1);
      if (p1 != text.size()) throw std::invalid_argument(text);
      return {v, v};
    }
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    const int lo = std::stoi(a, &p1), hi = std::stoi(b, &p2);
    if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument(text);
    if (lo > hi) throw Usage(what + " " + text + " is empty");
    return {lo, hi};
  } catch (const Usage&) {
    throw;
  } catch (const std::exception&) {
    throw Usage(what + " must look like lo:hi, got '" + text + "'");
  }
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Usage(what + " must be a comma-separated list of integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw Usage(what + " is empty");
  return out;
}

Dataset load_inputs(const std::string& images, const std::string& labels) {
  if (!labels.empty()) return load_dataset(images, labels);
  const IdxArray img = parse_idx(read_file(images));
  Shape shape(img.dims.begin(), img.dims.end());
  if (shape.size() == 3) shape.insert(shape.begin() + 1, 1);
  const double scale = img.type == IdxType::u8 ? 1.0 / 255.0 : 1.0;
  std::vector<float> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.data[i] * scale);
  Dataset d;
  d.inputs = Tensor::real(shape, std::move(v));
  d.labels.assign(shape[0], -1);
  return d;
}

// Scores (N x K) for every sample, in sample order.
std::vector<double> score_all(const ModelGraph& g, const Dataset& d, const ForwardOptions& opts, std::size_t& classes,
                              std::size_t batch = 256) {
  std::vector<double> scores;
  classes = 0;
  const std::size_t n = d.inputs.rank() ? d.inputs.dim(0) : 0;
  const Shape sample = d.sample_shape();
  const std::size_t per = shape_size(sample);
  for (std::size_t first = 0; first < n; first += batch) {
    const std::size_t count = std::min(batch, n - first);
    Shape s = sample;
    s.insert(s.begin(), count);
    std::vector<float> v(count * per);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(d.inputs.value_at(first * per + i));
    const Tensor out = forward(g, Tensor::real(s, std::move(v)), opts);
    classes = out.size() / count;
    for (std::size_t i = 0; i < out.size(); ++i) scores.push_back(out.value_at(i));
  }
  return scores;
}

// Rank of the label among the scores (0 = best); ties resolve to the lower index.
std::size_t label_rank(const double* s, std::size_t k, int label) {
  const auto y = static_cast<std::size_t>(label);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (s[j] > s[y] || (s[j] == s[y] && j < y)) ++rank;
  }
  return rank;
}

std::size_t argmax(const double* s, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (s[j] > s[best]) best = j;
  }
  return best;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  return f;
}

ForwardOptions forward_options(const std::string& mode, const std::string& accum) {
  ForwardOptions o;
  o.mode = *parse_forward_mode(mode);
  o.accum = accum == "log" ? AccumMode::log : AccumMode::linear;
  return o;
}

const std::vector<std::string> kModes = {"float32", "method1", "method2_base2", "method2_sqrt2"};

// ---- subcommands -------------------------------------------------------------

struct CalibrateArgs {
  std::string model, images, out, csv;
  std::size_t samples = 100;
  int bitwidth = 0;
  std::string grid = "-10:20";
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const auto [lo, hi] = parse_range(a.grid, "--fsr-grid");
  ModelGraph g = read_model(a.model);
  const Dataset d = load_inputs(a.images, "");
  const std::size_t n = d.inputs.rank() ? d.inputs.dim(0) : 0;
  if (n == 0) throw ShapeError("calibration needs at least one sample");
  const std::size_t take = std::min(a.samples, n);
  Dataset sub = d;
  sub.labels.assign(n, 0);
  sub = sub.subset(0, take);
  const CalibrationReport rep =
      calibrate_model(g, sub.inputs, FsrGrid{lo, hi}, a.bitwidth > 0 ? std::optional<int>(a.bitwidth) : std::nullopt);
  write_model(a.out, g);

  std::ofstream f = open_out(a.csv);
  CsvWriter csv(f, {"layer", "target", "kind", "bitwidth", "fsr", "l1", "chosen"});
  for (const LayerCalibration& lc : rep.layers) {
    for (const CandidateError& c : lc.search.candidates) {
      csv.row({std::to_string(lc.layer), lc.weights ? "weights" : "activations",
               lc.cfg.kind == QuantKind::log ? "log" : "linear", std::to_string(lc.cfg.bitwidth),
               std::to_string(c.fsr), format_number(c.l1), c.fsr == lc.cfg.fsr ? "1" : "0"});
    }
  }
  out << "calibrated " << rep.layers.size() << " quantizers on " << take << " samples\n";
  for (const LayerCalibration& lc : rep.layers) {
    out << "  layer " << lc.layer << (lc.weights ? " weights" : " activations") << ": fsr " << lc.cfg.fsr;
    if (!lc.weights) out << " (offset " << lc.fsr_offset << ")";
    out << ", L1 log " << format_number(lc.l1_log) << ", L1 linear " << format_number(lc.l1_linear) << "\n";
  }
  return kExitOk;
}

struct SweepArgs {
  std::string model, images, labels, out, mode = "method2_base2", accum = "linear";
  std::string bitwidths = "3,4,5", range = "-4:8";
  std::size_t limit = 0;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const auto [lo, hi] = parse_range(a.range, "--fsr-range");
  const std::vector<int> widths = parse_int_list(a.bitwidths, "--bitwidths");
  const ModelGraph base = read_model(a.model);
  Dataset d = load_dataset(a.images, a.labels);
  if (a.limit && a.limit < d.size()) d = d.subset(0, a.limit);
  const ForwardOptions opts = forward_options(a.mode, a.accum);

  std::ofstream file;
  std::ostream* sink = &out;
  if (!a.out.empty()) {
    file = open_out(a.out);
    sink = &file;
  }
  CsvWriter csv(*sink, {"bitwidth", "fsr", "top1", "top5"});
  for (int bw : widths) {
    for (int fsr = lo; fsr <= hi; ++fsr) {
      ModelGraph g = base;
      g.global_fsr = fsr;
      for (LayerSpec& l : g.layers) {
        if (l.is_quantizer()) l.quant->bitwidth = bw;
      }
      std::size_t k = 0;
      const std::vector<double> s = score_all(g, d, opts, k);
      std::size_t top1 = 0, top5 = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const std::size_t r = label_rank(s.data() + i * k, k, d.labels[i]);
        top1 += r == 0;
        top5 += r < 5;
      }
      const double n = d.size() ? static_cast<double>(d.size()) : 1.0;
      csv.row({std::to_string(bw), std::to_string(fsr), format_number(static_cast<double>(top1) / n),
               format_number(static_cast<double>(top5) / n)});
    }
  }
  return kExitOk;
}

struct InferArgs {
  std::string model, images, labels, out, mode = "float32", accum = "linear";
  bool compare = false;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const ModelGraph g = read_model(a.model);
  const Dataset d = load_inputs(a.images, a.labels);
  const ForwardOptions opts = forward_options(a.mode, a.accum);
  const std::size_t n = d.inputs.rank() ? d.inputs.dim(0) : 0;

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t k = 0;
  const std::vector<double> s = score_all(g, d, opts, k);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ofstream file = open_out(a.out);
  CsvWriter csv(file, {"index", "predicted", "label"});
  std::size_t correct = 0, labeled = 0;
  std::vector<std::size_t> pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = argmax(s.data() + i * k, k);
    const int y = d.labels[i];
    csv.row({std::to_string(i), std::to_string(pred[i]), y >= 0 ? std::to_string(y) : ""});
    if (y >= 0) {
      ++labeled;
      correct += pred[i] == static_cast<std::size_t>(y);
    }
  }
  out << "mode " << a.mode << " (" << a.accum << " accumulation): " << n << " samples in " << secs << " s";
  if (n) out << " (" << 1e6 * secs / static_cast<double>(n) << " us/sample)";
  out << "\n";
  if (labeled) out << "accuracy " << format_number(static_cast<double>(correct) / static_cast<double>(labeled)) << "\n";
  if (a.compare && n) {
    ForwardOptions ref;
    ref.mode = ForwardMode::float32;
    ref.dequantized_activations = true;
    // Method 2 quantizes the weights itself, so its reference uses the same codes.
    const bool method2 = opts.mode == ForwardMode::method2_base2 || opts.mode == ForwardMode::method2_sqrt2;
    ModelGraph deq = g;
    if (method2) {
      for (LayerSpec& l : deq.layers) {
        if (l.has_weights() && l.quant) l.quant->base_frac_bits = opts.mode == ForwardMode::method2_sqrt2 ? 1 : 0;
      }
      deq = quantize_weights(deq);
    }
    const auto t1 = std::chrono::steady_clock::now();
    const std::vector<double> r = score_all(deq, d, ref, k);
    const double rsecs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) agree += argmax(r.data() + i * k, k) == pred[i];
    out << "float32 reference: " << rsecs << " s, argmax agreement "
        << format_number(static_cast<double>(agree) / static_cast<double>(n)) << "\n";
  }
  return kExitOk;
}

struct AnalyzeArgs {
  std::string images, dist = "exponential", csv, kind = "log", base = "2", rounding = "nearest", grid = "-10:20";
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  double scale = 1.0;
  int bits = 4;
  bool is_signed = false;
  std::optional<int> fsr;
  std::size_t bins = 256;
};

int cmd_quant_analyze(const AnalyzeArgs& a, std::ostream& out) {
  std::vector<double> x;
  if (!a.images.empty()) {
    const IdxArray arr = parse_idx(read_file(a.images));
    x = arr.data;
  } else {
    Rng rng(a.seed);
    x.resize(a.samples);
    for (double& v : x) {
      if (a.dist == "exponential") v = rng.exponential();
      else if (a.dist == "lognormal") v = std::exp(rng.normal());
      else if (a.dist == "gaussian") v = rng.normal();
      else v = rng.uniform();
      v *= a.scale;
    }
  }
  if (x.empty()) throw DomainError("no samples to analyze");
  QuantizerConfig q = a.kind == "log" ? log_config(a.bits, a.is_signed, 0, a.base == "sqrt2" ? 1 : 0,
                                                   a.rounding == "floor" ? Rounding::floor_msb
                                                                         : Rounding::round_nearest_sqrt2)
                                      : linear_config(a.bits, a.is_signed, 0);
  if (a.fsr) {
    q.fsr = *a.fsr;
  } else {
    const auto [lo, hi] = parse_range(a.grid, "--fsr-grid");
    q.fsr = calibrate_fsr(x, q, FsrGrid{lo, hi});
  }
  const double l1 = quant_error_l1(x, q);
  const Histogram h = error_histogram(x, q, a.bins);
  if (!a.csv.empty()) {
    std::ofstream f = open_out(a.csv);
    CsvWriter csv(f, {"bin", "lo", "hi", "count"});
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      csv.row({std::to_string(i), format_number(h.edges[i]), format_number(h.edges[i + 1]), std::to_string(h.counts[i])});
    }
  }
  out << q.describe() << "\n";
  out << "samples " << x.size() << ", fsr " << q.fsr << ", mean L1 error " << format_number(l1) << "\n";
  out << "zero-bin mass " << format_number(static_cast<double>(h.counts[h.zero_bin()]) / static_cast<double>(x.size()))
      << "\n";
  return kExitOk;
}

struct PackArgs {
  std::string model, out;
  bool unpack = false;
};

int cmd_pack(const PackArgs& a, std::ostream& out) {
  const ModelGraph g = read_model(a.model);
  ModelGraph r = g;
  if (a.unpack) {
    for (auto& [i, t] : r.weights) t = dequantize_tensor(t);
  } else {
    r = quantize_weights(g);
  }
  const auto before = serialize_model(g);
  const auto after = serialize_model(r);
  write_file(a.out, after);
  out << a.model << ": " << before.size() << " bytes -> " << a.out << ": " << after.size() << " bytes (ratio "
      << format_number(static_cast<double>(before.size()) / static_cast<double>(after.size())) << ")\n";
  return kExitOk;
}

struct GenArgs {
  std::string kind = "images", images, labels;
  std::size_t samples = 1000, size = 12, dims = 2;
  std::uint64_t seed = 1;
  double noise = 0.7;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  Dataset d;
  if (a.kind == "images") {
    ImageSetOptions o;
    o.samples = a.samples;
    o.size = a.size;
    o.noise = a.noise;
    o.seed = a.seed;
    d = make_image_set(o);
  } else {
    d = make_separable(a.samples, a.dims, a.seed);
  }
  save_dataset(d, a.images, a.labels);
  out << "wrote " << d.size() << " samples of " << shape_string(d.sample_shape()) << "\n";
  return kExitOk;
}

struct InitArgs {
  std::string arch = "small-cnn", out;
  std::uint64_t seed = 1;
  std::uint32_t inputs = 2, hidden = 64, classes = 10, image = 12;
  int weight_bits = 5, act_bits = 4, act_fsr = 3;
};

int cmd_init_model(const InitArgs& a, std::ostream& out) {
  ModelGraph arch;
  Shape sample;
  const QuantizerConfig act = log_config(a.act_bits, false, a.act_fsr);
  if (a.arch == "small-cnn") {
    CnnOptions o;
    o.image = a.image;
    o.hidden = a.hidden;
    o.classes = a.classes;
    o.activation = act;
    arch = make_small_cnn(o);
    sample = {1, a.image, a.image};
  } else {
    arch = make_mlp(a.inputs, a.hidden, a.classes, act);
    sample = {a.inputs};
  }
  TrainConfig cfg;
  cfg.weight_q = log_config(a.weight_bits, true, 0);
  cfg.activation_q = act;
  TrainState st = init_state(arch, sample, a.seed);
  refresh_weight_fsr(st, cfg);
  write_model(a.out, export_model(st, cfg));
  out << "wrote " << a.arch << " model with " << arch.layers.size() << " layers to " << a.out << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  const std::vector<std::uint8_t> bytes = read_file(config_path);
  const TrainJob job = parse_train_job(parse_key_values(std::string(bytes.begin(), bytes.end())),
                                       fs::path(config_path).parent_path());

  Dataset train, test;
  bool have_test = false;
  if (job.dataset == "synthetic") {
    ImageSetOptions o;
    o.samples = job.train_samples + job.test_samples;
    o.size = job.image_size;
    o.noise = job.noise;
    o.seed = job.data_seed;
    const Dataset all = make_image_set(o);
    train = all.subset(0, job.train_samples);
    test = all.subset(job.train_samples, job.test_samples);
    have_test = job.test_samples > 0;
  } else if (job.dataset == "separable") {
    const Dataset all = make_separable(job.train_samples + job.test_samples, job.dims, job.data_seed);
    train = all.subset(0, job.train_samples);
    test = all.subset(job.train_samples, job.test_samples);
    have_test = job.test_samples > 0;
  } else {
    train = load_dataset(job.train_images, job.train_labels);
    if (!job.test_images.empty()) {
      test = load_dataset(job.test_images, job.test_labels);
      have_test = true;
    }
  }
  const Shape sample = train.sample_shape();
  const std::uint32_t classes = static_cast<std::uint32_t>(std::max(train.classes, 2));
  const QuantizerConfig act = job.config.activation_q.value_or(log_config(4, false, 3));

  TrainState st;
  if (job.model == "small-cnn") {
    if (sample.size() != 3) throw ConfigError("key 'model': small-cnn needs C x H x W samples");
    CnnOptions o;
    o.channels = static_cast<std::uint32_t>(sample[0]);
    o.image = static_cast<std::uint32_t>(sample[1]);
    o.hidden = job.hidden;
    o.classes = classes;
    o.activation = act;
    st = init_state(make_small_cnn(o), sample, job.config.seed);
  } else if (job.model == "mlp") {
    st = init_state(make_mlp(static_cast<std::uint32_t>(shape_size(sample)), job.hidden, classes, act), sample,
                    job.config.seed);
  } else {
    st = state_from_model(read_model(job.model), sample, job.config.seed);
  }
  refresh_weight_fsr(st, job.config);
  write_model(job.checkpoint, export_model(st, job.config));

  std::ofstream metrics = open_out(job.metrics);
  CsvWriter csv(metrics, {"step", "epoch", "loss", "train_acc", "test_acc"});
  metrics.flush();
  try {
    fit(st, train, have_test ? &test : nullptr, job.config, [&](const EpochMetrics& m, const TrainState& s) {
      csv.row({std::to_string(m.step), std::to_string(m.epoch), format_number(m.loss), format_number(m.train_acc),
               format_number(m.test_acc)});
      metrics.flush();
      if (job.checkpoint_every && m.epoch % job.checkpoint_every == 0) write_model(job.checkpoint, export_model(s, job.config));
      out << "epoch " << m.epoch << ": loss " << format_number(m.loss) << ", train " << format_number(m.train_acc)
          << ", test " << format_number(m.test_acc) << "\n";
    });
  } catch (const NumericError& e) {
    err << "lognet: training stopped: " << e.what() << "; last good checkpoint kept at " << job.checkpoint.string()
        << "\n";
    return kExitRuntime;
  }
  write_model(job.checkpoint, export_model(st, job.config));
  return kExitOk;
}

}  // namespace

// ---- entry point ---------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Log-domain quantized CNN toolkit"};
  app.name("lognet");
  app.require_subcommand(1, 1);

  CalibrateArgs ca;
  auto* calibrate = app.add_subcommand("calibrate", "Choose per-layer FSRs from sample activations");
  calibrate->add_option("--model", ca.model, "Input model file")->required();
  calibrate->add_option("--images", ca.images, "IDX image file")->required();
  calibrate->add_option("--out", ca.out, "Calibrated model file")->required();
  calibrate->add_option("--csv", ca.csv, "Per-candidate report")->required();
  calibrate->add_option("--samples", ca.samples, "Number of samples")->capture_default_str();
  calibrate->add_option("--bitwidth", ca.bitwidth, "Activation bitwidth override");
  calibrate->add_option("--fsr-grid", ca.grid, "FSR candidates lo:hi")->capture_default_str();

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Accuracy vs FSR per activation bitwidth");
  sweep->add_option("--model", sa.model)->required();
  sweep->add_option("--images", sa.images)->required();
  sweep->add_option("--labels", sa.labels)->required();
  sweep->add_option("--mode", sa.mode)->check(CLI::IsMember(kModes))->capture_default_str();
  sweep->add_option("--accum", sa.accum)->check(CLI::IsMember({"linear", "log"}))->capture_default_str();
  sweep->add_option("--bitwidths", sa.bitwidths)->capture_default_str();
  sweep->add_option("--fsr-range", sa.range)->capture_default_str();
  sweep->add_option("--limit", sa.limit, "Use only the first N samples");
  sweep->add_option("--out", sa.out, "CSV output (default stdout)");

  std::string config;
  auto* train = app.add_subcommand("train", "Quantized training from a key=value config");
  train->add_option("config", config, "Config file")->required();

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Predict classes and report timing");
  infer->add_option("--model", ia.model)->required();
  infer->add_option("--images", ia.images)->required();
  infer->add_option("--labels", ia.labels);
  infer->add_option("--out", ia.out, "Predictions CSV")->required();
  infer->add_option("--mode", ia.mode)->check(CLI::IsMember(kModes))->capture_default_str();
  infer->add_option("--accum", ia.accum)->check(CLI::IsMember({"linear", "log"}))->capture_default_str();
  infer->add_flag("--compare-float", ia.compare, "Also run float32 on the dequantized weights and activations and report argmax agreement");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("quant-analyze", "Quantization error histogram");
  analyze->add_option("--images", aa.images, "IDX file with the values (default: synthetic)");
  analyze->add_option("--dist", aa.dist)
      ->check(CLI::IsMember({"exponential", "lognormal", "gaussian", "uniform"}))
      ->capture_default_str();
  analyze->add_option("--samples", aa.samples)->capture_default_str();
  analyze->add_option("--seed", aa.seed)->capture_default_str();
  analyze->add_option("--scale", aa.scale)->capture_default_str();
  analyze->add_option("--kind", aa.kind)->check(CLI::IsMember({"log", "linear"}))->capture_default_str();
  analyze->add_option("--bits", aa.bits)->capture_default_str();
  analyze->add_flag("--signed", aa.is_signed);
  analyze->add_option("--base", aa.base)->check(CLI::IsMember({"2", "sqrt2"}))->capture_default_str();
  analyze->add_option("--rounding", aa.rounding)->check(CLI::IsMember({"nearest", "floor"}))->capture_default_str();
  analyze->add_option("--fsr", aa.fsr, "Fixed FSR (default: calibrate)");
  analyze->add_option("--fsr-grid", aa.grid)->capture_default_str();
  analyze->add_option("--bins", aa.bins)->capture_default_str();
  analyze->add_option("--csv", aa.csv, "Histogram CSV");

  PackArgs pa;
  auto* pack = app.add_subcommand("pack", "Store weights as packed codes");
  pack->add_option("--model", pa.model)->required();
  pack->add_option("--out", pa.out)->required();
  pack->add_flag("--unpack", pa.unpack, "Convert packed weights back to f32");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--kind", ga.kind)->check(CLI::IsMember({"images", "separable"}))->capture_default_str();
  gen->add_option("--samples", ga.samples)->capture_default_str();
  gen->add_option("--size", ga.size)->capture_default_str();
  gen->add_option("--dims", ga.dims)->capture_default_str();
  gen->add_option("--noise", ga.noise)->capture_default_str();
  gen->add_option("--seed", ga.seed)->capture_default_str();
  gen->add_option("--images", ga.images)->required();
  gen->add_option("--labels", ga.labels)->required();

  InitArgs na;
  auto* init = app.add_subcommand("init-model", "Write an untrained model");
  init->add_option("--arch", na.arch)->check(CLI::IsMember({"small-cnn", "mlp"}))->capture_default_str();
  init->add_option("--out", na.out)->required();
  init->add_option("--seed", na.seed)->capture_default_str();
  init->add_option("--inputs", na.inputs)->capture_default_str();
  init->add_option("--hidden", na.hidden)->capture_default_str();
  init->add_option("--classes", na.classes)->capture_default_str();
  init->add_option("--image", na.image)->capture_default_str();
  init->add_option("--weight-bits", na.weight_bits)->capture_default_str();
  init->add_option("--act-bits", na.act_bits)->capture_default_str();
  init->add_option("--act-fsr", na.act_fsr)->capture_default_str();

  std::vector<const char*> argv{"lognet"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*calibrate) return cmd_calibrate(ca, out);
    if (*sweep) return cmd_sweep(sa, out);
    if (*train) return cmd_train(config, out, err);
    if (*infer) return cmd_infer(ia, out);
    if (*analyze) return cmd_quant_analyze(aa, out);
    if (*pack) return cmd_pack(pa, out);
    if (*gen) return cmd_gen_data(ga, out);
    if (*init) return cmd_init_model(na, out);
  } catch (const IoError& e) {
    err << "lognet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "lognet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "lognet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Usage& e) {
    err << "lognet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "lognet: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace lognet::cli

#pragma once

// Command-line frontend. Subcommands:
//   calibrate      per-layer FSR search, writes a model + CSV report
//   sweep          accuracy vs FSR for several activation bitwidths
//   train          quantized training from a key=value config
//   infer          per-sample predictions + timing summary
//   quant-analyze  error histogram and L1 error of one quantizer
//   pack           convert weights to packed codes (or back with --unpack)
//   gen-data       write a synthetic dataset as IDX files
//   init-model     write an untrained model for an architecture preset
//
// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or parse failure.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lognet/train.hpp"

namespace lognet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// key=value text; '#' starts a comment; blank lines ignored. Throws
/// ConfigError naming the line on malformed input or a repeated key.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct TrainJob {
  TrainConfig config;
  std::string dataset = "synthetic";  // synthetic | separable | idx
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t train_samples = 8000;
  std::size_t test_samples = 2000;
  double noise = 0.7;
  std::size_t image_size = 12;
  std::size_t dims = 2;  // separable
  std::uint64_t data_seed = 11;
  std::string model = "small-cnn";  // small-cnn | mlp | path to a model file
  std::uint32_t hidden = 64;
  std::filesystem::path checkpoint = "checkpoint.logn";
  std::filesystem::path metrics = "metrics.csv";
  std::size_t checkpoint_every = 1;
};

/// Builds a TrainJob from key=value pairs; relative paths resolve against base.
/// Throws ConfigError naming the offending key.
TrainJob parse_train_job(const std::map<std::string, std::string>& kv, const std::filesystem::path& base);

}  // namespace lognet::cli

#pragma once

// Bit-exact file formats (see docs/formats.md):
//   packed codes   sign bit first, then magnitude MSB-first; bits fill each
//                  byte from its MSB; zero padding to a byte boundary per tensor
//   ModelFile      "LOGN" container, little-endian scalars
//   IDX            big-endian header as in the standard IDX layout
//   CSV            RFC 4180, CRLF line endings, header row

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lognet/dataset.hpp"
#include "lognet/nn.hpp"

namespace lognet {

// ---- packed codes ----------------------------------------------------------

/// ceil(count * bitwidth / 8).
std::size_t packed_size(std::size_t count, int bitwidth);

/// Throws DomainError when a code does not fit cfg.
std::vector<std::uint8_t> pack_codes(std::span<const LogCode> codes, const QuantizerConfig& cfg);

/// Throws ParseError on a short payload, non-zero padding, a negative zero or
/// a magnitude outside cfg (offset relative to the payload start).
std::vector<LogCode> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, const QuantizerConfig& cfg);

// ---- ModelFile -------------------------------------------------------------

inline constexpr std::uint16_t kModelFormatVersion = 1;

enum class PayloadType : std::uint8_t { f32 = 1, packed = 2 };

std::vector<std::uint8_t> serialize_model(const ModelGraph& g);
ModelGraph parse_model(std::span<const std::uint8_t> bytes);

void write_model(const std::filesystem::path& path, const ModelGraph& g);
ModelGraph read_model(const std::filesystem::path& path);

/// Copy of g with conv/fc weights replaced by codes of their weight quantizer
/// (layers without a quantizer keep f32 weights).
ModelGraph quantize_weights(const ModelGraph& g);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// ---- IDX -------------------------------------------------------------------

enum class IdxType : std::uint8_t { u8 = 0x08, i8 = 0x09, i16 = 0x0B, i32 = 0x0C, f32 = 0x0D, f64 = 0x0E };

struct IdxArray {
  IdxType type = IdxType::u8;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;  // raw element values (u8 not rescaled)
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& a);

/// Images (u8 scaled by 1/255, or f32) plus 1-D labels. N x H x W images gain
/// a channel axis. Throws ShapeError when the label count differs.
Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Writes f32 images and u8 labels.
void save_dataset(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels);

// ---- CSV -------------------------------------------------------------------

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header);

  void row(const std::vector<std::string>& fields);
  std::size_t columns() const { return columns_; }

  static std::string escape(const std::string& field);

 private:
  void emit(const std::vector<std::string>& fields);

  std::ostream& out_;
  std::size_t columns_;
};

/// Shortest round-trip decimal form of v.
std::string format_number(double v);

}  // namespace lognet

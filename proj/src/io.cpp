#include "lognet/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>

#include "lognet/errors.hpp"

namespace lognet {

// ---- packed codes ----------------------------------------------------------

std::size_t packed_size(std::size_t count, int bitwidth) {
  return (count * static_cast<std::size_t>(bitwidth) + 7) / 8;
}

std::vector<std::uint8_t> pack_codes(std::span<const LogCode> codes, const QuantizerConfig& cfg) {
  cfg.validate();
  const int bw = cfg.bitwidth;
  const int mag = cfg.magnitude_bits();
  std::vector<std::uint8_t> out(packed_size(codes.size(), bw), 0);
  std::size_t bit = 0;
  for (const LogCode& c : codes) {
    check_code(c, cfg);
    std::uint32_t word = c.is_zero ? 0u : c.code;
    if (cfg.is_signed && c.is_negative()) word |= 1u << mag;
    for (int b = bw - 1; b >= 0; --b, ++bit) {
      if ((word >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    }
  }
  return out;
}

std::vector<LogCode> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, const QuantizerConfig& cfg) {
  cfg.validate();
  const int bw = cfg.bitwidth;
  const int mag = cfg.magnitude_bits();
  const std::size_t need = packed_size(count, bw);
  if (bytes.size() < need) throw ParseError("packed payload truncated", bytes.size());
  std::vector<LogCode> out;
  out.reserve(count);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t start = bit / 8;
    std::uint32_t word = 0;
    for (int b = 0; b < bw; ++b, ++bit) word = (word << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
    const std::uint32_t magnitude = word & ((1u << mag) - 1u);
    const bool negative = cfg.is_signed && ((word >> mag) & 1u);
    if (magnitude == 0) {
      if (negative) throw ParseError("negative zero code", start);
      out.push_back(LogCode::zero());
    } else {
      out.push_back(LogCode::make(negative ? -1 : 1, static_cast<std::uint16_t>(magnitude)));
    }
  }
  for (; bit < need * 8; ++bit) {
    if ((bytes[bit / 8] >> (7 - bit % 8)) & 1u) throw ParseError("non-zero padding bits", bit / 8);
  }
  return out;
}

// ---- little-endian byte streams --------------------------------------------

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::int16_t i16(const char* what) { return static_cast<std::int16_t>(u16(what)); }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& what, std::size_t at) const { throw ParseError(what, at); }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw ParseError(std::string("truncated ") + what, pos_);
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'L', 'O', 'G', 'N'};

std::int16_t to_i16(long v, const char* what) {
  if (v < INT16_MIN || v > INT16_MAX) throw ConfigError(std::string(what) + " does not fit in 16 bits");
  return static_cast<std::int16_t>(v);
}

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw ConfigError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

void write_quant_block(ByteWriter& w, const std::optional<QuantizerConfig>& q) {
  if (!q) {
    for (int i = 0; i < 7; ++i) w.u8(0);
    return;
  }
  q->validate();
  w.u8(static_cast<std::uint8_t>(q->kind));
  w.u8(static_cast<std::uint8_t>(q->bitwidth));
  w.u8(q->is_signed ? 1 : 0);
  w.i16(to_i16(q->fsr, "quantizer fsr"));
  w.u8(static_cast<std::uint8_t>(q->base_frac_bits));
  w.u8(static_cast<std::uint8_t>(q->rounding));
}

std::optional<QuantizerConfig> read_quant_block(ByteReader& r) {
  const std::size_t at = r.offset();
  const std::uint8_t kind = r.u8("quantizer kind");
  const std::uint8_t bw = r.u8("quantizer bitwidth");
  const std::uint8_t sg = r.u8("quantizer signedness");
  const std::int16_t fsr = r.i16("quantizer fsr");
  const std::uint8_t bf = r.u8("quantizer base");
  const std::uint8_t rnd = r.u8("quantizer rounding");
  if (kind == 0) {
    if (bw || sg || fsr || bf || rnd) r.fail("non-zero fields in an empty quantizer block", at);
    return std::nullopt;
  }
  if (kind != 1 && kind != 2) r.fail("unknown quantizer kind " + std::to_string(kind), at);
  if (sg > 1) r.fail("bad signedness flag", at + 2);
  if (rnd > 1) r.fail("unknown rounding mode " + std::to_string(rnd), at + 6);
  QuantizerConfig q;
  q.kind = static_cast<QuantKind>(kind);
  q.bitwidth = bw;
  q.is_signed = sg == 1;
  q.fsr = fsr;
  q.base_frac_bits = bf;
  q.rounding = static_cast<Rounding>(rnd);
  try {
    q.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid quantizer block: ") + e.what(), at);
  }
  return q;
}

void write_tensor_payload(ByteWriter& w, const Tensor& t) {
  if (t.is_quantized()) {
    w.u8(static_cast<std::uint8_t>(PayloadType::packed));
    w.u32(to_u32(t.size(), "payload count"));
    write_quant_block(w, t.config());
    w.bytes(pack_codes(t.codes(), t.config()));
  } else {
    w.u8(static_cast<std::uint8_t>(PayloadType::f32));
    w.u32(to_u32(t.size(), "payload count"));
    for (float v : t.values()) w.f32(v);
  }
}

Tensor read_tensor_payload(ByteReader& r, const Shape& shape) {
  const std::size_t at = r.offset();
  const std::uint8_t dtype = r.u8("payload dtype");
  if (dtype != static_cast<std::uint8_t>(PayloadType::f32) && dtype != static_cast<std::uint8_t>(PayloadType::packed)) {
    r.fail("unknown payload dtype " + std::to_string(dtype), at);
  }
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("payload count");
  if (count != shape_size(shape)) {
    r.fail("payload has " + std::to_string(count) + " elements, shape " + shape_string(shape) + " needs " +
               std::to_string(shape_size(shape)),
           count_at);
  }
  if (dtype == static_cast<std::uint8_t>(PayloadType::f32)) {
    std::vector<float> v(count);
    for (float& x : v) x = r.f32("f32 payload");
    return Tensor::real(shape, std::move(v));
  }
  if (dtype == static_cast<std::uint8_t>(PayloadType::packed)) {
    const std::size_t q_at = r.offset();
    const std::optional<QuantizerConfig> q = read_quant_block(r);
    if (!q) r.fail("packed payload without a quantizer", q_at);
    const std::size_t data_at = r.offset();
    const auto bytes = r.bytes(packed_size(count, q->bitwidth), "packed payload");
    try {
      return Tensor::quantized(shape, unpack_codes(bytes, count, *q), *q);
    } catch (const ParseError& e) {
      throw ParseError("bad packed payload", data_at + e.offset());
    }
  }
  r.fail("unknown payload dtype " + std::to_string(dtype), at);
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelGraph& g) {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kModelFormatVersion);
  w.i16(to_i16(g.global_fsr, "global fsr"));
  if (g.layers.size() > UINT16_MAX) throw ConfigError("too many layers");
  w.u16(static_cast<std::uint16_t>(g.layers.size()));
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    w.u8(static_cast<std::uint8_t>(l.kind));
    switch (l.kind) {
      case LayerKind::conv:
        for (std::uint32_t v : {l.in_channels, l.out_channels, l.kernel_h, l.kernel_w, l.stride, l.pad}) w.u32(v);
        break;
      case LayerKind::fc:
        w.u32(l.in_features);
        w.u32(l.out_features);
        break;
      case LayerKind::maxpool:
        w.u32(l.pool_kernel);
        w.u32(l.pool_stride);
        break;
      case LayerKind::batchnorm:
        w.u32(l.channels);
        break;
      default:
        break;
    }
    write_quant_block(w, l.quant);
    w.i16(to_i16(l.fsr_offset, "fsr offset"));
    if (l.has_weights()) {
      const auto it = g.weights.find(i);
      if (it == g.weights.end()) throw ConfigError("layer " + std::to_string(i) + " has no weights");
      if (it->second.shape() != l.weight_shape()) throw ShapeError("layer " + std::to_string(i) + " weight shape mismatch");
      write_tensor_payload(w, it->second);
    } else if (l.kind == LayerKind::batchnorm) {
      const auto it = g.batchnorm.find(i);
      if (it == g.batchnorm.end()) throw ConfigError("batchnorm layer " + std::to_string(i) + " has no parameters");
      const BatchNormState& bn = it->second;
      if (bn.channels() != l.channels) throw ShapeError("batchnorm parameter count mismatch");
      w.u8(static_cast<std::uint8_t>(PayloadType::f32));
      w.u32(to_u32(4 * bn.channels(), "payload count"));
      for (const auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
        for (double x : *v) w.f32(static_cast<float>(x));
      }
    }
  }
  return w.take();
}

ModelGraph parse_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  for (char c : kMagic) {
    const std::size_t at = r.offset();
    if (r.u8("magic") != static_cast<std::uint8_t>(c)) r.fail("bad magic (expected \"LOGN\")", at);
  }
  {
    const std::size_t at = r.offset();
    const std::uint16_t version = r.u16("version");
    if (version != kModelFormatVersion) r.fail("unsupported format version " + std::to_string(version), at);
  }
  ModelGraph g;
  g.global_fsr = r.i16("global fsr");
  const std::uint16_t count = r.u16("layer count");
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint8_t tag = r.u8("layer kind");
    if (tag < 1 || tag > 8) r.fail("unknown layer kind " + std::to_string(tag), at);
    LayerSpec l;
    l.kind = static_cast<LayerKind>(tag);
    switch (l.kind) {
      case LayerKind::conv:
        l.in_channels = r.u32("conv geometry");
        l.out_channels = r.u32("conv geometry");
        l.kernel_h = r.u32("conv geometry");
        l.kernel_w = r.u32("conv geometry");
        l.stride = r.u32("conv geometry");
        l.pad = r.u32("conv geometry");
        if (!l.in_channels || !l.out_channels || !l.kernel_h || !l.kernel_w || !l.stride) {
          r.fail("degenerate conv geometry", at + 1);
        }
        break;
      case LayerKind::fc:
        l.in_features = r.u32("fc geometry");
        l.out_features = r.u32("fc geometry");
        if (!l.in_features || !l.out_features) r.fail("degenerate fc geometry", at + 1);
        break;
      case LayerKind::maxpool:
        l.pool_kernel = r.u32("maxpool geometry");
        l.pool_stride = r.u32("maxpool geometry");
        if (!l.pool_kernel || !l.pool_stride) r.fail("degenerate maxpool geometry", at + 1);
        break;
      case LayerKind::batchnorm:
        l.channels = r.u32("batchnorm geometry");
        if (!l.channels) r.fail("batchnorm with zero channels", at + 1);
        break;
      default:
        l.stride = 1;
        break;
    }
    const std::size_t q_at = r.offset();
    l.quant = read_quant_block(r);
    if (l.is_quantizer()) {
      if (!l.quant) r.fail("quantizer layer without a quantizer block", q_at);
      const QuantKind want = l.kind == LayerKind::logquant ? QuantKind::log : QuantKind::linear;
      if (l.quant->kind != want) r.fail("quantizer kind does not match the layer kind", q_at);
    }
    l.fsr_offset = r.i16("fsr offset");
    if (l.has_weights()) {
      g.weights[i] = read_tensor_payload(r, l.weight_shape());
    } else if (l.kind == LayerKind::batchnorm) {
      const Tensor t = read_tensor_payload(r, {4, l.channels});
      if (t.is_quantized()) r.fail("batchnorm parameters must be f32", r.offset());
      BatchNormState bn = BatchNormState::identity(l.channels);
      const auto v = t.values();
      for (std::size_t c = 0; c < l.channels; ++c) {
        bn.gamma[c] = v[c];
        bn.beta[c] = v[l.channels + c];
        bn.running_mean[c] = v[2 * l.channels + c];
        bn.running_var[c] = v[3 * l.channels + c];
      }
      g.batchnorm[i] = std::move(bn);
    }
    g.layers.push_back(l);
  }
  if (!r.done()) r.fail("trailing bytes after the last layer", r.offset());
  return g;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

void write_model(const std::filesystem::path& path, const ModelGraph& g) { write_file(path, serialize_model(g)); }

ModelGraph read_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

ModelGraph quantize_weights(const ModelGraph& g) {
  ModelGraph out = g;
  for (auto& [i, t] : out.weights) {
    const LayerSpec& l = out.layers.at(i);
    if (l.quant) t = quantize_tensor(dequantize_tensor(t), *l.quant);
  }
  return out;
}

// ---- IDX -------------------------------------------------------------------

namespace {

std::size_t idx_elem_size(IdxType t) {
  switch (t) {
    case IdxType::u8:
    case IdxType::i8: return 1;
    case IdxType::i16: return 2;
    case IdxType::i32:
    case IdxType::f32: return 4;
    case IdxType::f64: return 8;
  }
  return 0;
}

std::uint64_t read_be(const std::uint8_t* p, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v = (v << 8) | p[i];
  return v;
}

void write_be(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t n) {
  for (std::size_t i = n; i-- > 0;) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError("truncated IDX magic", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0) throw ParseError("bad IDX magic", 0);
  IdxArray a;
  const std::uint8_t t = bytes[2];
  if (t != 0x08 && t != 0x09 && t != 0x0B && t != 0x0C && t != 0x0D && t != 0x0E) {
    throw ParseError("unknown IDX element type " + std::to_string(t), 2);
  }
  a.type = static_cast<IdxType>(t);
  const std::size_t ndim = bytes[3];
  if (ndim == 0) throw ParseError("IDX file with zero dimensions", 3);
  if (bytes.size() < 4 + 4 * ndim) throw ParseError("truncated IDX dimensions", bytes.size());
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    a.dims.push_back(static_cast<std::uint32_t>(read_be(bytes.data() + 4 + 4 * d, 4)));
    count *= a.dims.back();
  }
  const std::size_t esz = idx_elem_size(a.type);
  const std::size_t start = 4 + 4 * ndim;
  if (bytes.size() - start != count * esz) {
    throw ParseError("IDX payload has " + std::to_string(bytes.size() - start) + " bytes, dims need " +
                         std::to_string(count * esz),
                     bytes.size() < start + count * esz ? bytes.size() : start + count * esz);
  }
  a.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t raw = read_be(bytes.data() + start + i * esz, esz);
    switch (a.type) {
      case IdxType::u8: a.data[i] = static_cast<double>(raw); break;
      case IdxType::i8: a.data[i] = static_cast<std::int8_t>(raw); break;
      case IdxType::i16: a.data[i] = static_cast<std::int16_t>(raw); break;
      case IdxType::i32: a.data[i] = static_cast<std::int32_t>(raw); break;
      case IdxType::f32: a.data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(raw)); break;
      case IdxType::f64: a.data[i] = std::bit_cast<double>(raw); break;
    }
  }
  return a;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& a) {
  if (a.dims.empty() || a.dims.size() > 255) throw ShapeError("IDX needs 1 to 255 dimensions");
  std::size_t count = 1;
  for (std::uint32_t d : a.dims) count *= d;
  if (count != a.data.size()) throw ShapeError("IDX data size does not match dims");
  std::vector<std::uint8_t> out = {0, 0, static_cast<std::uint8_t>(a.type), static_cast<std::uint8_t>(a.dims.size())};
  for (std::uint32_t d : a.dims) write_be(out, d, 4);
  const std::size_t esz = idx_elem_size(a.type);
  for (double v : a.data) {
    std::uint64_t raw = 0;
    switch (a.type) {
      case IdxType::u8: raw = static_cast<std::uint8_t>(v); break;
      case IdxType::i8: raw = static_cast<std::uint8_t>(static_cast<std::int8_t>(v)); break;
      case IdxType::i16: raw = static_cast<std::uint16_t>(static_cast<std::int16_t>(v)); break;
      case IdxType::i32: raw = static_cast<std::uint32_t>(static_cast<std::int32_t>(v)); break;
      case IdxType::f32: raw = std::bit_cast<std::uint32_t>(static_cast<float>(v)); break;
      case IdxType::f64: raw = std::bit_cast<std::uint64_t>(v); break;
    }
    write_be(out, raw, esz);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const IdxArray img = parse_idx(read_file(images));
  const IdxArray lab = parse_idx(read_file(labels));
  if (lab.dims.size() != 1) throw ShapeError("label file must be 1-D");
  if (img.dims[0] != lab.dims[0]) {
    throw ShapeError("image file has " + std::to_string(img.dims[0]) + " samples but label file has " +
                     std::to_string(lab.dims[0]));
  }
  Shape shape(img.dims.begin(), img.dims.end());
  if (shape.size() == 3) shape.insert(shape.begin() + 1, 1);
  const double scale = img.type == IdxType::u8 ? 1.0 / 255.0 : 1.0;
  std::vector<float> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.data[i] * scale);
  Dataset d;
  d.inputs = Tensor::real(shape, std::move(v));
  int classes = 0;
  for (double y : lab.data) {
    if (y < 0 || y != std::floor(y)) throw ShapeError("labels must be non-negative integers");
    d.labels.push_back(static_cast<int>(y));
    classes = std::max(classes, static_cast<int>(y) + 1);
  }
  d.classes = classes;
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
  d.validate();
  IdxArray img;
  img.type = IdxType::f32;
  for (std::size_t s : d.inputs.shape()) img.dims.push_back(to_u32(s, "dimension"));
  img.data.resize(d.inputs.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = d.inputs.value_at(i);
  IdxArray lab;
  lab.type = IdxType::u8;
  lab.dims = {to_u32(d.size(), "sample count")};
  for (int y : d.labels) {
    if (y > 255) throw ShapeError("labels above 255 do not fit the u8 label file");
    lab.data.push_back(y);
  }
  write_file(images, serialize_idx(img));
  write_file(labels, serialize_idx(lab));
}

// ---- CSV -------------------------------------------------------------------

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> header) : out_(out), columns_(header.size()) {
  emit(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) {
    throw ShapeError("CSV row has " + std::to_string(fields.size()) + " fields, header has " + std::to_string(columns_));
  }
  emit(fields);
}

std::string CsvWriter::escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void CsvWriter::emit(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << escape(fields[i]);
  }
  out_ << "\r\n";
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace lognet

#pragma once

// Versioned binary model format, magic "ONRXMDL1".
//
//   magic[8] | u16 version | u16 model_kind | u16 n_units
//   per unit:
//     u8 unit_kind (0 mlp, 1 gru) | name
//     mlp: u16 n_layers, then per layer u8 kind, i64 in, i64 out, f32 dropout_p
//     gru: i64 input, i64 hidden, i64 layers, u8 bidirectional
//     u32 n_tensors, then per tensor (canonical parameter order):
//       name | u8 ndim | i64 dims[] | u8 flags (bit0 mask, bit1 quant)
//       dense:     f32 values, little-endian, row-major
//       quantized: u8 bits, then per row: u8 scheme, i8 max_exp, f32 scale,
//                  packed b-bit codes (LSB-first within each byte)
//       mask (if flagged): bit-packed keep bits, LSB-first
//
// Weights are stored as 32-bit floats (or codes) regardless of the scalar
// type used in memory; loading casts back. All multi-byte fields are
// little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "onrx/nn/gru.hpp"
#include "onrx/nn/layers.hpp"
#include "onrx/nn/quant.hpp"

static_assert(std::endian::native == std::endian::little,
              "model serialization assumes a little-endian host");

namespace onrx {

inline constexpr char kModelMagic[8] = {'O', 'N', 'R', 'X', 'M', 'D', 'L', '1'};
inline constexpr uint16_t kModelVersion = 1;

enum class ModelKind : uint16_t { generic = 0, chanest = 1, demapper = 2, decoder = 3 };

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}
  void bytes(const void* p, size_t n) { os_.write(static_cast<const char*>(p), std::streamsize(n)); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void i8(int8_t v) { bytes(&v, 1); }
  void u16(uint16_t v) { bytes(&v, 2); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i64(int64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw std::invalid_argument("string too long to serialize");
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& os_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& is) : is_(is) {}
  void bytes(void* p, size_t n) {
    is_.read(static_cast<char*>(p), std::streamsize(n));
    if (!is_) throw std::runtime_error("truncated or unreadable binary file");
  }
  uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
  int8_t i8() { int8_t v; bytes(&v, 1); return v; }
  uint16_t u16() { uint16_t v; bytes(&v, 2); return v; }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
  int64_t i64() { int64_t v; bytes(&v, 8); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
  double f64() { double v; bytes(&v, 8); return v; }
  std::string str() {
    std::string s(u16(), '\0');
    if (!s.empty()) bytes(s.data(), s.size());
    return s;
  }

 private:
  std::istream& is_;
};

namespace detail {

inline void write_packed_bits(ByteWriter& w, const std::vector<uint8_t>& bits) {
  std::vector<uint8_t> packed((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) packed[i / 8] |= uint8_t(1u << (i % 8));
  w.bytes(packed.data(), packed.size());
}

inline std::vector<uint8_t> read_packed_bits(ByteReader& r, size_t n) {
  std::vector<uint8_t> packed((n + 7) / 8);
  if (!packed.empty()) r.bytes(packed.data(), packed.size());
  std::vector<uint8_t> bits(n);
  for (size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

// Packs one row of b-bit codes, LSB-first across the byte stream.
inline void write_packed_codes(ByteWriter& w, const std::vector<uint64_t>& codes, int bits) {
  std::vector<uint8_t> out((codes.size() * size_t(bits) + 7) / 8, 0);
  size_t bitpos = 0;
  for (uint64_t code : codes) {
    for (int b = 0; b < bits; ++b, ++bitpos)
      if ((code >> b) & 1u) out[bitpos / 8] |= uint8_t(1u << (bitpos % 8));
  }
  w.bytes(out.data(), out.size());
}

inline std::vector<uint64_t> read_packed_codes(ByteReader& r, size_t n, int bits) {
  std::vector<uint8_t> in((n * size_t(bits) + 7) / 8);
  if (!in.empty()) r.bytes(in.data(), in.size());
  std::vector<uint64_t> codes(n, 0);
  size_t bitpos = 0;
  for (size_t i = 0; i < n; ++i)
    for (int b = 0; b < bits; ++b, ++bitpos)
      if ((in[bitpos / 8] >> (bitpos % 8)) & 1u) codes[i] |= uint64_t(1) << b;
  return codes;
}

template <class S>
void write_tensor(ByteWriter& w, const ParamRef<S>& p, const TensorQuant* quant) {
  w.str(p.name);
  const auto& t = *p.value;
  w.u8(static_cast<uint8_t>(t.shape.size()));
  for (int64_t d : t.shape) w.i64(d);
  const bool has_mask = p.has_mask();
  const bool has_quant = quant && quant->active();
  w.u8(uint8_t((has_mask ? 1 : 0) | (has_quant ? 2 : 0)));
  if (has_quant) {
    const int64_t rows = t.rows(), cols = t.cols();
    if (static_cast<int64_t>(quant->rows.size()) != rows)
      throw std::invalid_argument("quant row metadata does not match tensor rows");
    w.u8(quant->bits);
    std::vector<uint64_t> codes(static_cast<size_t>(cols));
    for (int64_t i = 0; i < rows; ++i) {
      const RowQuant& rq = quant->rows[static_cast<size_t>(i)];
      w.u8(static_cast<uint8_t>(rq.scheme));
      w.i8(rq.max_exp);
      w.f32(rq.scale);
      for (int64_t j = 0; j < cols; ++j)
        codes[static_cast<size_t>(j)] =
            quant_nearest_code(rq, quant->bits, double(t.data[size_t(i * cols + j)]));
      write_packed_codes(w, codes, quant->bits);
    }
  } else {
    for (S v : t.data) w.f32(static_cast<float>(v));
  }
  if (has_mask) {
    if (p.mask->size() != t.data.size())
      throw std::invalid_argument("mask does not match tensor size");
    write_packed_bits(w, *p.mask);
  }
}

template <class S>
void read_tensor(ByteReader& r, const ParamRef<S>& p, TensorQuant& quant_out) {
  const std::string name = r.str();
  (void)name;  // informational; layout is positional
  const uint8_t ndim = r.u8();
  std::vector<int64_t> shape(ndim);
  for (auto& d : shape) d = r.i64();
  if (shape != p.value->shape) throw std::runtime_error("model file tensor shape mismatch");
  const uint8_t flags = r.u8();
  auto& t = *p.value;
  quant_out = TensorQuant{};
  if (flags & 2u) {
    const int bits = r.u8();
    check_quant_bits(bits);
    const int64_t rows = t.rows(), cols = t.cols();
    quant_out.bits = static_cast<uint8_t>(bits);
    quant_out.rows.resize(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
      RowQuant& rq = quant_out.rows[static_cast<size_t>(i)];
      rq.scheme = static_cast<QuantScheme>(r.u8());
      rq.max_exp = r.i8();
      rq.scale = r.f32();
      const auto codes = read_packed_codes(r, static_cast<size_t>(cols), bits);
      for (int64_t j = 0; j < cols; ++j)
        t.data[size_t(i * cols + j)] =
            static_cast<S>(dequant_code(rq, bits, codes[static_cast<size_t>(j)]));
    }
  } else {
    for (auto& v : t.data) v = static_cast<S>(r.f32());
  }
  if (flags & 1u) {
    if (!p.mask) throw std::runtime_error("model file has a mask for an unmaskable tensor");
    *p.mask = read_packed_bits(r, t.data.size());
  } else if (p.mask) {
    p.mask->clear();
  }
}

}  // namespace detail

// ---- unit-level writers/readers ------------------------------------------

// `quant`, when non-null, must be parallel to the unit's params() order.
template <class S>
void write_mlp_unit(ByteWriter& w, const std::string& name, Mlp<S>& mlp,
                    const std::vector<TensorQuant>* quant = nullptr) {
  w.u8(0);
  w.str(name);
  const auto& layers = mlp.layers();
  w.u16(static_cast<uint16_t>(layers.size()));
  for (const auto& l : layers) {
    const LayerSpec s = l->spec();
    w.u8(static_cast<uint8_t>(s.kind));
    w.i64(s.in);
    w.i64(s.out);
    w.f32(s.dropout_p);
  }
  auto params = mlp.params();
  if (quant && quant->size() != params.size())
    throw std::invalid_argument("quant table does not match parameter list");
  w.u32(static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i)
    detail::write_tensor(w, params[i], quant ? &(*quant)[i] : nullptr);
}

// Reconstructs the layer stack from specs, then fills parameters in order.
template <class S>
void read_mlp_unit(ByteReader& r, const std::string& expected_name, Mlp<S>& out,
                   std::vector<TensorQuant>* quant_out = nullptr) {
  if (r.u8() != 0) throw std::runtime_error("model file unit kind mismatch (want mlp)");
  const std::string name = r.str();
  if (!expected_name.empty() && name != expected_name)
    throw std::runtime_error("model file unit name mismatch: got '" + name + "'");
  const uint16_t n_layers = r.u16();
  out.layers().clear();
  for (uint16_t i = 0; i < n_layers; ++i) {
    const auto kind = static_cast<LayerKind>(r.u8());
    const int64_t in = r.i64();
    const int64_t out_dim = r.i64();
    const float p = r.f32();
    switch (kind) {
      case LayerKind::linear:
        out.layers().push_back(std::make_unique<LinearLayer<S>>(in, out_dim));
        break;
      case LayerKind::relu:
        out.layers().push_back(std::make_unique<ReluLayer<S>>());
        break;
      case LayerKind::sigmoid:
        out.layers().push_back(std::make_unique<SigmoidLayer<S>>());
        break;
      case LayerKind::dropout:
        out.layers().push_back(std::make_unique<DropoutLayer<S>>(p));
        break;
      default:
        throw std::runtime_error("model file has an unsupported mlp layer kind");
    }
  }
  auto params = out.params();
  const uint32_t n_tensors = r.u32();
  if (n_tensors != params.size()) throw std::runtime_error("model file tensor count mismatch");
  if (quant_out) quant_out->resize(params.size());
  TensorQuant scratch;
  for (size_t i = 0; i < params.size(); ++i)
    detail::read_tensor(r, params[i], quant_out ? (*quant_out)[i] : scratch);
}

template <class S>
void write_gru_unit(ByteWriter& w, const std::string& name, BiGru<S>& gru,
                    const std::vector<TensorQuant>* quant = nullptr) {
  w.u8(1);
  w.str(name);
  w.i64(gru.input_size());
  w.i64(gru.hidden_size());
  w.i64(gru.n_layers());
  w.u8(gru.n_directions() == 2 ? 1 : 0);
  auto params = gru.params();
  if (quant && quant->size() != params.size())
    throw std::invalid_argument("quant table does not match parameter list");
  w.u32(static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i)
    detail::write_tensor(w, params[i], quant ? &(*quant)[i] : nullptr);
}

template <class S>
BiGru<S> read_gru_unit(ByteReader& r, const std::string& expected_name,
                       std::vector<TensorQuant>* quant_out = nullptr) {
  if (r.u8() != 1) throw std::runtime_error("model file unit kind mismatch (want gru)");
  const std::string name = r.str();
  if (!expected_name.empty() && name != expected_name)
    throw std::runtime_error("model file unit name mismatch: got '" + name + "'");
  const int64_t input = r.i64();
  const int64_t hidden = r.i64();
  const int64_t layers = r.i64();
  const bool bidir = r.u8() != 0;
  BiGru<S> gru(input, hidden, layers, bidir);
  auto params = gru.params();
  const uint32_t n_tensors = r.u32();
  if (n_tensors != params.size()) throw std::runtime_error("model file tensor count mismatch");
  if (quant_out) quant_out->resize(params.size());
  TensorQuant scratch;
  for (size_t i = 0; i < params.size(); ++i)
    detail::read_tensor(r, params[i], quant_out ? (*quant_out)[i] : scratch);
  return gru;
}

// ---- file-level helpers ----------------------------------------------------

inline void write_model_header(ByteWriter& w, ModelKind kind, uint16_t n_units) {
  w.bytes(kModelMagic, sizeof(kModelMagic));
  w.u16(kModelVersion);
  w.u16(static_cast<uint16_t>(kind));
  w.u16(n_units);
}

inline uint16_t read_model_header(ByteReader& r, ModelKind expected_kind) {
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a model file (bad magic)");
  const uint16_t version = r.u16();
  if (version != kModelVersion) throw std::runtime_error("unsupported model file version");
  const auto kind = static_cast<ModelKind>(r.u16());
  if (kind != expected_kind) throw std::runtime_error("model file holds a different model kind");
  return r.u16();
}

inline std::ofstream open_binary_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_binary_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

}  // namespace onrx

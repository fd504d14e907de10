#pragma once

// Per-row weight quantization grids shared by the compression pass, the
// serializer, and the integer inference emulator.
//
// Two schemes, chosen row by row:
//   fixed_point: value = s * scale, s a b-bit two's complement integer.
//                scale is calibrated as max|w| / (2^(b-1) - 1).
//   pow2:        value = 0 or +-2^e * scale with e in
//                (max_exp - K, max_exp], K = 2^(b-1) - 1 exponent levels,
//                so {0} union {+-2^e * scale} fits in b bits with a sign bit.
//
// Codes are stored as unsigned b-bit fields:
//   fixed_point: two's complement of s.
//   pow2:        0 encodes the value 0; otherwise bit (b-1) is the sign
//                (1 = negative) and the low bits hold idx in [1, K] with
//                e = max_exp - (idx - 1).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace onrx {

enum class QuantScheme : uint8_t { fixed_point = 0, pow2 = 1 };

struct RowQuant {
  QuantScheme scheme = QuantScheme::fixed_point;
  int8_t max_exp = 0;
  float scale = 0.0f;
};

// Quantization metadata for one weight tensor; inactive (bits == 0) for
// tensors that were never quantized. `rows` is parallel to the tensor rows.
struct TensorQuant {
  uint8_t bits = 0;
  std::vector<RowQuant> rows;

  bool active() const { return bits != 0; }
};

inline void check_quant_bits(int bits) {
  if (bits < 2 || bits > 16) throw std::invalid_argument("quant bits must be in [2,16]");
}

// Number of usable exponent levels for a pow2 row at the given bit width.
inline int64_t pow2_level_count(int bits) {
  check_quant_bits(bits);
  return (int64_t(1) << (bits - 1)) - 1;
}

inline double dequant_code(const RowQuant& rq, int bits, uint64_t code) {
  check_quant_bits(bits);
  const uint64_t field_mask = (uint64_t(1) << bits) - 1;
  code &= field_mask;
  if (rq.scheme == QuantScheme::fixed_point) {
    const int64_t half = int64_t(1) << (bits - 1);
    int64_t s = static_cast<int64_t>(code);
    if (s >= half) s -= int64_t(1) << bits;
    return double(s) * double(rq.scale);
  }
  if (code == 0) return 0.0;
  const uint64_t sign = code >> (bits - 1);
  const int64_t idx = static_cast<int64_t>(code & ((uint64_t(1) << (bits - 1)) - 1));
  if (idx == 0) return 0.0;  // unused encoding, treated as zero
  const int e = int(rq.max_exp) - int(idx - 1);
  const double mag = std::ldexp(double(rq.scale), e);
  return sign ? -mag : mag;
}

// Nearest grid code for a real weight. Deterministic tie-breaks: prefer zero,
// then the smaller magnitude.
inline uint64_t quant_nearest_code(const RowQuant& rq, int bits, double w) {
  check_quant_bits(bits);
  if (rq.scale == 0.0f) return 0;
  if (rq.scheme == QuantScheme::fixed_point) {
    const int64_t half = int64_t(1) << (bits - 1);
    int64_t s = std::llround(w / double(rq.scale));
    if (s < -half) s = -half;
    if (s > half - 1) s = half - 1;
    return static_cast<uint64_t>(s) & ((uint64_t(1) << bits) - 1);
  }
  const int64_t levels = pow2_level_count(bits);
  const double mag = std::abs(w);
  if (mag == 0.0) return 0;
  const int e_lo = int(rq.max_exp) - int(levels - 1);
  const int e_hi = int(rq.max_exp);
  // candidate exponents bracketing log2(mag/scale), clamped to the grid
  const double e_t = std::log2(mag / double(rq.scale));
  uint64_t best_code = 0;
  double best_err = mag;  // distance to the zero point
  for (const double e_c : {std::floor(e_t), std::ceil(e_t)}) {
    int e = int(e_c);
    e = std::max(e_lo, std::min(e_hi, e));
    const double cand = std::ldexp(double(rq.scale), e);
    const double err = std::abs(mag - cand);
    const uint64_t idx = static_cast<uint64_t>(e_hi - e + 1);
    // strict improvement, or equal error at smaller magnitude (larger idx)
    if (err < best_err || (err == best_err && best_code != 0 && idx > best_code)) {
      best_err = err;
      best_code = idx;
    }
  }
  if (best_code == 0) return 0;
  const uint64_t sign = w < 0.0 ? 1 : 0;
  return (sign << (bits - 1)) | best_code;
}

// True iff w sits exactly on the row's grid (used by the grid-membership
// tests and the idempotence property).
inline bool on_quant_grid(const RowQuant& rq, int bits, double w) {
  const uint64_t code = quant_nearest_code(rq, bits, w);
  return dequant_code(rq, bits, code) == w;
}

}  // namespace onrx

#pragma once

// Transmitter chain: scramble -> convolutional encode -> interleave -> 16QAM
// -> OFDM modulate, plus the L-LTF preamble and frame assembly.

#include <array>
#include <bit>
#include <cmath>
#include <random>

#include "onrx/common.hpp"
#include "onrx/fft.hpp"

namespace onrx {

// ---------------------------------------------------------------------------
// Scrambler, polynomial x^7 + x^4 + 1.
// State bit i (LSB = 0) holds x_{i+1}; feedback = x7 XOR x4 is both the
// output keystream bit and the bit shifted into x1.
// ---------------------------------------------------------------------------

inline BitVec scramble(const BitVec& bits, uint32_t seed) {
  if ((seed & 0x7f) == 0) throw std::invalid_argument("scrambler seed must be nonzero");
  uint32_t s = seed & 0x7f;
  BitVec out(bits.size());
  for (size_t i = 0; i < bits.size(); ++i) {
    uint32_t fb = ((s >> 6) ^ (s >> 3)) & 1u;
    s = ((s << 1) | fb) & 0x7fu;
    out[i] = static_cast<uint8_t>(bits[i] ^ fb);
  }
  return out;
}

inline BitVec descramble(const BitVec& bits, uint32_t seed) { return scramble(bits, seed); }

// ---------------------------------------------------------------------------
// Rate-1/2 convolutional encoder, constraint length 7, generators 133/171
// octal. Window bit 0 is the current input bit, bit 6 the oldest; the
// generator masks below are the standard taps in that bit order.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kConvGenA = 0b1101101;  // 133 octal, current-bit-first
inline constexpr uint32_t kConvGenB = 0b1001111;  // 171 octal, current-bit-first
inline constexpr int kConvK = 7;

inline BitVec convolutional_encode(const BitVec& bits) {
  if (bits.size() < 6) throw std::invalid_argument("input shorter than tail");
  for (size_t i = bits.size() - 6; i < bits.size(); ++i)
    if (bits[i] != 0) throw std::invalid_argument("input must end with 6 zero tail bits");
  BitVec out(2 * bits.size());
  uint32_t win = 0;
  for (size_t i = 0; i < bits.size(); ++i) {
    win = ((win << 1) | bits[i]) & 0x7fu;
    out[2 * i] = static_cast<uint8_t>(std::popcount(win & kConvGenA) & 1u);
    out[2 * i + 1] = static_cast<uint8_t>(std::popcount(win & kConvGenB) & 1u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-permutation block interleaver. For block size N and bits-per-carrier
// n_bpsc: first permutation i = (N/16)(k mod 16) + floor(k/16), second
// j = s*floor(i/s) + (i + N - floor(16 i / N)) mod s with s = max(n_bpsc/2, 1).
// ---------------------------------------------------------------------------

inline std::vector<int> interleaver_map(int n_cbps, int n_bpsc) {
  const int s = std::max(n_bpsc / 2, 1);
  std::vector<int> map(n_cbps);  // map[k] = output position of input bit k
  for (int k = 0; k < n_cbps; ++k) {
    const int i = (n_cbps / 16) * (k % 16) + k / 16;
    const int j = s * (i / s) + (i + n_cbps - (16 * i) / n_cbps) % s;
    map[k] = j;
  }
  return map;
}

inline BitVec interleave(const BitVec& coded, int n_cbps, int n_bpsc = 4) {
  if (coded.size() % static_cast<size_t>(n_cbps) != 0)
    throw std::invalid_argument("length not divisible by n_cbps");
  const auto map = interleaver_map(n_cbps, n_bpsc);
  BitVec out(coded.size());
  for (size_t base = 0; base < coded.size(); base += n_cbps)
    for (int k = 0; k < n_cbps; ++k) out[base + map[k]] = coded[base + k];
  return out;
}

inline BitVec deinterleave(const BitVec& bits, int n_cbps, int n_bpsc = 4) {
  if (bits.size() % static_cast<size_t>(n_cbps) != 0)
    throw std::invalid_argument("length not divisible by n_cbps");
  const auto map = interleaver_map(n_cbps, n_bpsc);
  BitVec out(bits.size());
  for (size_t base = 0; base < bits.size(); base += n_cbps)
    for (int k = 0; k < n_cbps; ++k) out[base + k] = bits[base + map[k]];
  return out;
}

template <class T>
inline std::vector<T> deinterleave_values(const std::vector<T>& vals, int n_cbps, int n_bpsc = 4) {
  if (vals.size() % static_cast<size_t>(n_cbps) != 0)
    throw std::invalid_argument("length not divisible by n_cbps");
  const auto map = interleaver_map(n_cbps, n_bpsc);
  std::vector<T> out(vals.size());
  for (size_t base = 0; base < vals.size(); base += n_cbps)
    for (int k = 0; k < n_cbps; ++k) out[base + k] = vals[base + map[k]];
  return out;
}

// ---------------------------------------------------------------------------
// Gray-coded 16QAM, per-axis levels {-3,-1,+1,+3}/sqrt(10). First two bits of
// a nibble select I, last two select Q: 00 -> -3, 01 -> -1, 11 -> +1,
// 10 -> +3 (adjacent levels differ in one bit).
// ---------------------------------------------------------------------------

inline constexpr double kQam16Scale = 0.31622776601683794;  // 1/sqrt(10)

inline double qam16_axis(uint8_t b_hi, uint8_t b_lo) {
  static constexpr std::array<double, 4> lut = {-3.0, -1.0, +3.0, +1.0};  // index b_hi*2+b_lo
  return lut[(b_hi << 1) | b_lo] * kQam16Scale;
}

inline cplx qam16_point(uint8_t nibble) {
  return {qam16_axis((nibble >> 3) & 1, (nibble >> 2) & 1),
          qam16_axis((nibble >> 1) & 1, nibble & 1)};
}

inline CplxVec qam16_map(const BitVec& bits) {
  if (bits.size() % 4 != 0) throw std::invalid_argument("bit count not divisible by 4");
  CplxVec out(bits.size() / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    const uint8_t nib = static_cast<uint8_t>((bits[4 * i] << 3) | (bits[4 * i + 1] << 2) |
                                             (bits[4 * i + 2] << 1) | bits[4 * i + 3]);
    out[i] = qam16_point(nib);
  }
  return out;
}

inline uint8_t qam16_hard_demap_symbol(cplx y) {
  uint8_t best = 0;
  double best_d = 1e300;
  for (uint8_t nib = 0; nib < 16; ++nib) {
    const double d = std::norm(y - qam16_point(nib));
    if (d < best_d) {
      best_d = d;
      best = nib;
    }
  }
  return best;
}

inline BitVec qam16_hard_demap(const CplxVec& symbols) {
  BitVec out(symbols.size() * 4);
  for (size_t i = 0; i < symbols.size(); ++i) {
    const uint8_t nib = qam16_hard_demap_symbol(symbols[i]);
    out[4 * i] = (nib >> 3) & 1;
    out[4 * i + 1] = (nib >> 2) & 1;
    out[4 * i + 2] = (nib >> 1) & 1;
    out[4 * i + 3] = nib & 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcarrier layout. Used carriers are k = -26..-1, +1..+26 in that fixed
// order; pilots sit at k in {-21,-7,+7,+21} with fixed value +1.
// ---------------------------------------------------------------------------

inline constexpr std::array<int, 4> kPilotCarriers = {-21, -7, 7, 21};

inline std::vector<int> used_carriers(const OfdmConfig& cfg) {
  std::vector<int> ks;
  ks.reserve(cfg.n_used);
  for (int k = -cfg.n_used / 2; k <= cfg.n_used / 2; ++k)
    if (k != 0) ks.push_back(k);
  return ks;
}

inline bool is_pilot_carrier(int k) {
  for (int p : kPilotCarriers)
    if (k == p) return true;
  return false;
}

// Index of carrier k within the fixed -26..-1,+1..+26 ordering.
inline int used_carrier_index(int k, const OfdmConfig& cfg) {
  const int half = cfg.n_used / 2;
  return k < 0 ? k + half : half + k - 1;
}

inline int carrier_to_bin(int k, const OfdmConfig& cfg) { return k >= 0 ? k : k + cfg.nfft; }

// L-LTF frequency-domain sequence on carriers -26..-1, +1..+26.
inline constexpr std::array<int, 52> kLtfSequence = {
    // k = -26 .. -1
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1,
    // k = +1 .. +26
    1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1};

// One 64-sample L-LTF OFDM symbol (time domain, no CP).
inline CplxVec lltf_symbol_time(const OfdmConfig& cfg) {
  CplxVec spec(cfg.nfft, cplx(0.0, 0.0));
  const auto ks = used_carriers(cfg);
  for (size_t i = 0; i < ks.size(); ++i)
    spec[carrier_to_bin(ks[i], cfg)] = cplx(static_cast<double>(kLtfSequence[i]), 0.0);
  ifft_unitary(spec);
  return spec;
}

// Full 160-sample L-LTF: 32-sample cyclic prefix followed by two identical
// 64-sample symbols.
inline CplxVec lltf_time(const OfdmConfig& cfg) {
  const CplxVec sym = lltf_symbol_time(cfg);
  CplxVec out;
  out.reserve(cfg.lltf_time_length());
  out.insert(out.end(), sym.end() - cfg.nfft / 2, sym.end());
  out.insert(out.end(), sym.begin(), sym.end());
  out.insert(out.end(), sym.begin(), sym.end());
  return out;
}

// ---------------------------------------------------------------------------
// Symbol grid and OFDM modulation.
// ---------------------------------------------------------------------------

struct Grid {
  int rows = 0;
  int cols = 0;
  CplxVec data;

  Grid() = default;
  Grid(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c) {}
  cplx& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const cplx& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

inline CplxVec ofdm_modulate(const Grid& grid, const OfdmConfig& cfg) {
  if (grid.rows != cfg.n_ofdm_symbols || grid.cols != cfg.n_data)
    throw std::invalid_argument("grid dimensions do not match config");
  const auto ks = used_carriers(cfg);
  CplxVec out;
  out.reserve(cfg.payload_time_length());
  CplxVec spec(cfg.nfft);
  for (int sym = 0; sym < grid.rows; ++sym) {
    std::fill(spec.begin(), spec.end(), cplx(0.0, 0.0));
    int d = 0;
    for (int k : ks) {
      spec[carrier_to_bin(k, cfg)] =
          is_pilot_carrier(k) ? cplx(1.0, 0.0) : grid.at(sym, d++);
    }
    ifft_unitary(spec);
    out.insert(out.end(), spec.end() - cfg.cp_len, spec.end());
    out.insert(out.end(), spec.begin(), spec.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Packet bits and frame assembly.
// ---------------------------------------------------------------------------

struct PacketBits {
  BitVec info_bits;  // 8250 data bits followed by 6 zero tail bits
};

inline PacketBits make_packet_bits(uint64_t seed, const OfdmConfig& cfg) {
  PacketBits p;
  p.info_bits.resize(cfg.n_info_bits());
  std::mt19937_64 rng(seed);
  for (int i = 0; i < cfg.n_data_bits(); ++i)
    p.info_bits[i] = static_cast<uint8_t>(rng() & 1u);
  return p;
}

struct TxFrame {
  CplxVec lltf;          // 160 samples
  CplxVec payload_time;  // 86 * 80 samples
  Grid symbol_grid;      // 86 x 48 data symbols, kept for training labels

  CplxVec full_time() const {
    CplxVec out;
    out.reserve(lltf.size() + payload_time.size());
    out.insert(out.end(), lltf.begin(), lltf.end());
    out.insert(out.end(), payload_time.begin(), payload_time.end());
    return out;
  }
};

// Scrambled encoder input for a packet: scramble, then re-zero the 6 tail
// bits so the trellis terminates. This is also the decoder's training label.
inline BitVec scrambled_tx_bits(const PacketBits& packet, uint32_t scrambler_seed,
                                const OfdmConfig& cfg) {
  BitVec s = scramble(packet.info_bits, scrambler_seed);
  if (s.size() < static_cast<size_t>(cfg.n_tail_bits()))
    throw std::invalid_argument("packet shorter than tail");
  for (int i = 0; i < cfg.n_tail_bits(); ++i) s[s.size() - 1 - i] = 0;
  return s;
}

inline TxFrame build_frame(const PacketBits& packet, const OfdmConfig& cfg,
                           uint32_t scrambler_seed) {
  if (static_cast<int>(packet.info_bits.size()) != cfg.n_info_bits())
    throw std::invalid_argument("packet bit count does not match config");
  const BitVec scrambled = scrambled_tx_bits(packet, scrambler_seed, cfg);
  const BitVec coded = convolutional_encode(scrambled);
  const BitVec inter = interleave(coded, cfg.n_cbps(), cfg.bits_per_symbol);
  const CplxVec symbols = qam16_map(inter);

  TxFrame f;
  f.symbol_grid = Grid(cfg.n_ofdm_symbols, cfg.n_data);
  std::copy(symbols.begin(), symbols.end(), f.symbol_grid.data.begin());
  f.lltf = lltf_time(cfg);
  f.payload_time = ofdm_modulate(f.symbol_grid, cfg);
  return f;
}

}  // namespace onrx

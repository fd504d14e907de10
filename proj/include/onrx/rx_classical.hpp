#pragma once

// Non-ML baseline receiver: OFDM demodulation, LS channel estimation with
// LTF-difference noise estimation, per-subcarrier equalization, max-log
// approximate-LLR soft demapping, soft-input Viterbi decoding, descrambling.

#include <algorithm>
#include <cmath>
#include <limits>

#include "onrx/common.hpp"
#include "onrx/fft.hpp"
#include "onrx/phy.hpp"

namespace onrx {

struct CsiVector {
  CplxVec h;  // 52 coefficients, carriers -26..-1, +1..+26
};

struct NoiseEstimate {
  double sigma2 = 0.0;  // per-sample frequency-domain noise variance
};

using LlrVector = std::vector<double>;

inline constexpr double kDefaultLlrClamp = 30.0;

// Thrown by equalize when a CSI coefficient is exactly zero; the harness
// counts the packet as discarded.
struct DegenerateChannelError : std::runtime_error {
  DegenerateChannelError() : std::runtime_error("zero CSI coefficient") {}
};

// ---------------------------------------------------------------------------
// OFDM demodulation: CP removal + unitary FFT + used-carrier extraction.
// Returns an n_ofdm_symbols x n_used grid (inverse of ofdm_modulate).
// ---------------------------------------------------------------------------

inline Grid ofdm_demodulate(const CplxVec& payload_time, const OfdmConfig& cfg) {
  if (static_cast<int>(payload_time.size()) != cfg.payload_time_length())
    throw std::invalid_argument("payload length mismatch");
  const auto ks = used_carriers(cfg);
  Grid out(cfg.n_ofdm_symbols, cfg.n_used);
  CplxVec spec(cfg.nfft);
  for (int sym = 0; sym < cfg.n_ofdm_symbols; ++sym) {
    const size_t base = static_cast<size_t>(sym) * cfg.symbol_time_length() + cfg.cp_len;
    std::copy(payload_time.begin() + base, payload_time.begin() + base + cfg.nfft, spec.begin());
    fft_unitary(spec);
    for (int i = 0; i < cfg.n_used; ++i) out.at(sym, i) = spec[carrier_to_bin(ks[i], cfg)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// LS channel estimation from the 160-sample L-LTF. CSI is the average of the
// two per-symbol estimates; sigma2 is half the mean per-carrier difference
// power, which estimates the frequency-domain noise variance of one symbol.
// ---------------------------------------------------------------------------

inline std::pair<CsiVector, NoiseEstimate> ls_estimate(const CplxVec& lltf, const OfdmConfig& cfg) {
  if (static_cast<int>(lltf.size()) != cfg.lltf_time_length())
    throw std::invalid_argument("L-LTF length mismatch");
  const auto ks = used_carriers(cfg);
  CplxVec h1(cfg.n_used), h2(cfg.n_used);
  CplxVec spec(cfg.nfft);
  for (int rep = 0; rep < 2; ++rep) {
    const size_t base = 2 * cfg.cp_len + static_cast<size_t>(rep) * cfg.nfft;
    std::copy(lltf.begin() + base, lltf.begin() + base + cfg.nfft, spec.begin());
    fft_unitary(spec);
    auto& h = rep == 0 ? h1 : h2;
    for (int i = 0; i < cfg.n_used; ++i)
      h[i] = spec[carrier_to_bin(ks[i], cfg)] / cplx(static_cast<double>(kLtfSequence[i]), 0.0);
  }
  CsiVector csi;
  csi.h.resize(cfg.n_used);
  double diff = 0.0;
  for (int i = 0; i < cfg.n_used; ++i) {
    csi.h[i] = 0.5 * (h1[i] + h2[i]);
    diff += std::norm(h1[i] - h2[i]);
  }
  NoiseEstimate ne;
  ne.sigma2 = 0.5 * diff / cfg.n_used;
  return {csi, ne};
}

// ---------------------------------------------------------------------------
// Equalization: per-subcarrier division, pilots dropped.
// ---------------------------------------------------------------------------

inline Grid equalize(const Grid& symbols, const CsiVector& csi, const OfdmConfig& cfg) {
  if (symbols.cols != cfg.n_used || static_cast<int>(csi.h.size()) != cfg.n_used)
    throw std::invalid_argument("equalize dimension mismatch");
  const auto ks = used_carriers(cfg);
  for (int i = 0; i < cfg.n_used; ++i)
    if (csi.h[i] == cplx(0.0, 0.0)) throw DegenerateChannelError();
  Grid out(symbols.rows, cfg.n_data);
  for (int sym = 0; sym < symbols.rows; ++sym) {
    int d = 0;
    for (int i = 0; i < cfg.n_used; ++i) {
      if (is_pilot_carrier(ks[i])) continue;
      out.at(sym, d++) = symbols.at(sym, i) / csi.h[i];
    }
  }
  return out;
}

// Used-carrier index of each data slot, in grid column order.
inline std::vector<int> data_slot_carrier_index(const OfdmConfig& cfg) {
  const auto ks = used_carriers(cfg);
  std::vector<int> idx;
  idx.reserve(cfg.n_data);
  for (int i = 0; i < cfg.n_used; ++i)
    if (!is_pilot_carrier(ks[i])) idx.push_back(i);
  return idx;
}

// ---------------------------------------------------------------------------
// Approximate (max-log) LLR demapping under the log(P0/P1) convention:
// LLR_b = (min_{s: b=1} |y-s|^2 - min_{s: b=0} |y-s|^2) / sigma_eff^2 with
// sigma_eff^2 = sigma2 / |h_k|^2 for the symbol's subcarrier k.
// ---------------------------------------------------------------------------

inline void llr_demap_symbol(cplx y, double sigma_eff2, double clamp, double* out4) {
  double min0[4], min1[4];
  for (int b = 0; b < 4; ++b) {
    min0[b] = std::numeric_limits<double>::infinity();
    min1[b] = std::numeric_limits<double>::infinity();
  }
  for (uint8_t nib = 0; nib < 16; ++nib) {
    const double d = std::norm(y - qam16_point(nib));
    for (int b = 0; b < 4; ++b) {
      if ((nib >> (3 - b)) & 1) {
        min1[b] = std::min(min1[b], d);
      } else {
        min0[b] = std::min(min0[b], d);
      }
    }
  }
  for (int b = 0; b < 4; ++b) {
    const double llr = (min1[b] - min0[b]) / sigma_eff2;
    out4[b] = std::clamp(llr, -clamp, clamp);
  }
}

inline LlrVector approx_llr_demap(const Grid& eq_symbols, const CsiVector& csi, double sigma2,
                                  const OfdmConfig& cfg, double clamp = kDefaultLlrClamp) {
  if (eq_symbols.cols != cfg.n_data) throw std::invalid_argument("expected data-only grid");
  const double s2 = std::max(sigma2, 1e-12);
  const auto slot = data_slot_carrier_index(cfg);
  LlrVector out(static_cast<size_t>(eq_symbols.rows) * cfg.n_data * 4);
  size_t w = 0;
  for (int sym = 0; sym < eq_symbols.rows; ++sym) {
    for (int d = 0; d < cfg.n_data; ++d) {
      const double h2 = std::norm(csi.h[slot[d]]);
      const double sigma_eff2 = std::max(s2 / std::max(h2, 1e-300), 1e-300);
      llr_demap_symbol(eq_symbols.at(sym, d), sigma_eff2, clamp, &out[w]);
      w += 4;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Soft-input Viterbi decoder over the 64-state rate-1/2 trellis. Maximizes
// sum (1-2c)*LLR; full traceback; the encoder starts and terminates in the
// zero state.
// ---------------------------------------------------------------------------

// Arithmetic performed by one viterbi_decode call: each surviving trellis
// edge costs two additions (path metric plus the two branch terms) and one
// comparison against the candidate successor metric. Sign flips and the
// traceback are free.
struct ViterbiOpCount {
  int64_t adds = 0;
  int64_t compares = 0;
  int64_t total() const { return adds + compares; }
};

inline BitVec viterbi_decode(const LlrVector& llrs, ViterbiOpCount* ops = nullptr) {
  if (llrs.size() % 2 != 0) throw std::invalid_argument("LLR count must be even");
  const size_t n_steps = llrs.size() / 2;
  constexpr int n_states = 64;
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();

  // precomputed transitions: state s, input b -> next state and output pair
  struct Edge {
    int next;
    int8_t ca, cb;
  };
  static const auto edges = [] {
    std::array<std::array<Edge, 2>, n_states> e{};
    for (int s = 0; s < n_states; ++s) {
      for (int b = 0; b < 2; ++b) {
        const uint32_t win = ((static_cast<uint32_t>(s) << 1) | b) & 0x7fu;
        e[s][b] = {static_cast<int>(win & 0x3fu),
                   static_cast<int8_t>(std::popcount(win & kConvGenA) & 1u),
                   static_cast<int8_t>(std::popcount(win & kConvGenB) & 1u)};
      }
    }
    return e;
  }();

  std::vector<double> pm(n_states, neg_inf), next_pm(n_states);
  pm[0] = 0.0;
  std::vector<uint8_t> back(n_steps * n_states);  // bit 0: input, bit 1: msb of predecessor

  for (size_t t = 0; t < n_steps; ++t) {
    const double la = llrs[2 * t];
    const double lb = llrs[2 * t + 1];
    std::fill(next_pm.begin(), next_pm.end(), neg_inf);
    uint8_t* bk = &back[t * n_states];
    int live = 0;
    for (int s = 0; s < n_states; ++s) {
      if (pm[s] == neg_inf) continue;
      ++live;
      for (int b = 0; b < 2; ++b) {
        const Edge& e = edges[s][b];
        const double m =
            pm[s] + (e.ca ? -la : la) + (e.cb ? -lb : lb);
        if (m > next_pm[e.next]) {
          next_pm[e.next] = m;
          // e.next determines b and the low 5 bits of s; only s's top bit
          // needs recording (stored in bit 1, input bit in bit 0)
          bk[e.next] = static_cast<uint8_t>(b | ((s >> 5) << 1));
        }
      }
    }
    if (ops) {
      ops->adds += 4 * live;      // 2 edges per live state, 2 adds per edge
      ops->compares += 2 * live;  // one successor comparison per edge
    }
    pm.swap(next_pm);
  }

  // traceback from the zero (terminated) state; fall back to argmax if the
  // zero state is unreachable (malformed input)
  int state = 0;
  if (pm[0] == neg_inf)
    state = static_cast<int>(std::max_element(pm.begin(), pm.end()) - pm.begin());
  BitVec out(n_steps);
  for (size_t t = n_steps; t-- > 0;) {
    const uint8_t rec = back[t * n_states + state];
    const int b = rec & 1;
    const int s_top = (rec >> 1) & 1;
    out[t] = static_cast<uint8_t>(b);
    // invert transition: next = ((s << 1) | b) & 0x3f  =>  s = (next >> 1) | (s_top << 5)
    state = (state >> 1) | (s_top << 5);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full classical receive chain on one 7040-sample frame.
// ---------------------------------------------------------------------------

struct RxChainDebug {
  CsiVector csi;
  double sigma2 = 0.0;
  double rms_scale = 1.0;
};

inline BitVec run_classical_rx(const CplxVec& frame_rx, const OfdmConfig& cfg,
                               uint32_t scrambler_seed, double llr_clamp = kDefaultLlrClamp,
                               RxChainDebug* dbg = nullptr) {
  if (static_cast<int>(frame_rx.size()) != cfg.frame_time_length())
    throw std::invalid_argument("frame length mismatch");
  const CplxVec lltf(frame_rx.begin(), frame_rx.begin() + cfg.lltf_time_length());
  const CplxVec payload(frame_rx.begin() + cfg.lltf_time_length(), frame_rx.end());

  const auto [csi, noise] = ls_estimate(lltf, cfg);
  const Grid sym = ofdm_demodulate(payload, cfg);
  const Grid eq = equalize(sym, csi, cfg);
  const LlrVector llrs = approx_llr_demap(eq, csi, noise.sigma2, cfg, llr_clamp);
  const LlrVector deint = deinterleave_values(llrs, cfg.n_cbps(), cfg.bits_per_symbol);
  const BitVec decoded = viterbi_decode(deint);
  if (dbg) {
    dbg->csi = csi;
    dbg->sigma2 = noise.sigma2;
  }
  return descramble(decoded, scrambler_seed);
}

// Bit errors over the data region (tail bits excluded).
inline int count_bit_errors(const BitVec& decoded, const BitVec& sent, const OfdmConfig& cfg) {
  int errs = 0;
  for (int i = 0; i < cfg.n_data_bits(); ++i) errs += decoded[i] != sent[i];
  return errs;
}

}  // namespace onrx

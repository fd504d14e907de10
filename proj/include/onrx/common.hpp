#pragma once

// Shared scalar types, the OFDM geometry, and seeding helpers used by every
// other header in the library.

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace onrx {

using cplx = std::complex<double>;
using CplxVec = std::vector<cplx>;
using BitVec = std::vector<uint8_t>;  // one bit per byte, values 0/1

struct OfdmConfig {
  int nfft = 64;
  int n_used = 52;
  int n_data = 48;
  int n_pilot = 4;
  int cp_len = 16;
  int n_ofdm_symbols = 86;
  int bits_per_symbol = 4;  // 16QAM
  int coding_rate_num = 1;
  int coding_rate_den = 2;

  int lltf_time_length() const { return 2 * nfft + 2 * cp_len; }
  int symbol_time_length() const { return nfft + cp_len; }
  int payload_time_length() const { return n_ofdm_symbols * symbol_time_length(); }
  int frame_time_length() const { return lltf_time_length() + payload_time_length(); }
  int n_payload_symbols() const { return n_data * n_ofdm_symbols; }          // 4128
  int n_coded_bits() const { return n_payload_symbols() * bits_per_symbol; } // 16512
  int n_info_bits() const { return n_coded_bits() * coding_rate_num / coding_rate_den; } // 8256
  int n_tail_bits() const { return 6; }
  int n_data_bits() const { return n_info_bits() - n_tail_bits(); }          // 8250
  int n_cbps() const { return n_data * bits_per_symbol; }                    // 192

  void validate() const {
    if (n_used != n_data + n_pilot) throw std::invalid_argument("n_used != n_data + n_pilot");
    if (n_used >= nfft) throw std::invalid_argument("n_used must be < nfft");
    if (lltf_time_length() != 160) throw std::invalid_argument("unsupported L-LTF geometry");
  }
};

// splitmix64: cheap, well-distributed 64-bit mixer used to derive independent
// per-packet / per-purpose seeds from a master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t index, uint64_t purpose = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(purpose)) ^ index);
}

inline double mean_power(const CplxVec& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& v : x) acc += std::norm(v);
  return acc / static_cast<double>(x.size());
}

}  // namespace onrx

#pragma once

// Multipath fading plus AWGN. The channel is an exponential-decay Rayleigh
// tapped delay line, block fading (one realization per packet), renormalized
// to unit power per realization. Gaussian draws go through a hand-rolled
// Box-Muller on mt19937_64 so results are identical across platforms and
// standard-library versions.

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "onrx/common.hpp"

namespace onrx {

struct ChannelProfile {
  int n_taps = 5;
  double last_tap_decay_db = 15.0;  // power of last tap relative to first

  void validate() const {
    if (n_taps < 1 || n_taps > 16) throw std::invalid_argument("n_taps must be in [1,16]");
    if (last_tap_decay_db < 0.0) throw std::invalid_argument("decay must be >= 0 dB");
  }

  // Nominal per-tap powers, normalized to sum 1.
  std::vector<double> tap_powers() const {
    std::vector<double> p(n_taps);
    const double alpha =
        n_taps > 1 ? last_tap_decay_db * std::numbers::ln10 / 10.0 / (n_taps - 1) : 0.0;
    double sum = 0.0;
    for (int l = 0; l < n_taps; ++l) {
      p[l] = std::exp(-alpha * l);
      sum += p[l];
    }
    for (auto& v : p) v /= sum;
    return p;
  }
};

struct ChannelRealization {
  CplxVec taps;
  uint64_t seed = 0;
};

class GaussianSource {
 public:
  explicit GaussianSource(uint64_t seed) : rng_(seed) {}

  // Standard normal via Box-Muller; one spare value cached between calls.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1]: avoids log(0)
    const double u1 =
        (static_cast<double>(rng_() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
    const double u2 = static_cast<double>(rng_() >> 11) * (1.0 / 9007199254740992.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Circularly symmetric complex normal with E|x|^2 = 1.
  cplx cnormal() { return {normal() * std::numbers::sqrt2 / 2.0, normal() * std::numbers::sqrt2 / 2.0}; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline ChannelRealization sample_channel(uint64_t seed, const ChannelProfile& profile) {
  profile.validate();
  ChannelRealization ch;
  ch.seed = seed;
  ch.taps.resize(profile.n_taps);
  GaussianSource g(seed);
  const auto powers = profile.tap_powers();
  double total = 0.0;
  for (int l = 0; l < profile.n_taps; ++l) {
    ch.taps[l] = g.cnormal() * std::sqrt(powers[l]);
    total += std::norm(ch.taps[l]);
  }
  const double s = 1.0 / std::sqrt(total);
  for (auto& t : ch.taps) t *= s;  // exact unit power per realization
  return ch;
}

inline CplxVec apply_channel(const CplxVec& frame, const ChannelRealization& ch) {
  if (frame.size() <= ch.taps.size())
    throw std::invalid_argument("frame shorter than channel memory");
  CplxVec out(frame.size(), cplx(0.0, 0.0));
  for (size_t l = 0; l < ch.taps.size(); ++l) {
    if (ch.taps[l] == cplx(0.0, 0.0)) continue;
    for (size_t n = l; n < frame.size(); ++n) out[n] += ch.taps[l] * frame[n - l];
  }
  return out;
}

inline bool is_noiseless_snr(double snr_db) {
  return std::isinf(snr_db) && snr_db > 0.0;
}

inline CplxVec add_awgn(const CplxVec& frame, double snr_db, uint64_t seed) {
  if (is_noiseless_snr(snr_db)) return frame;
  const double p_sig = mean_power(frame);
  if (p_sig <= 0.0) throw std::invalid_argument("zero-power frame");
  const double sigma2 = p_sig * std::pow(10.0, -snr_db / 10.0);
  const double s = std::sqrt(sigma2);
  CplxVec out(frame.size());
  GaussianSource g(seed);
  for (size_t n = 0; n < frame.size(); ++n) out[n] = frame[n] + s * g.cnormal();
  return out;
}

}  // namespace onrx

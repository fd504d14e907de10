#pragma once

// Iterative radix-2 FFT with unitary (1/sqrt(N)) scaling on both directions,
// so modulate/demodulate and LS estimation stay scale-free.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "onrx/common.hpp"

namespace onrx {

namespace detail {

inline void fft_radix2(cplx* x, int n, bool inverse) {
  if (n <= 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft size must be a power of two");
  // bit-reversal permutation
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / len;
    const cplx wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx u = x[i + k];
        cplx v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

inline void fft_unitary(CplxVec& x) {
  detail::fft_radix2(x.data(), static_cast<int>(x.size()), false);
  const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : x) v *= s;
}

inline void ifft_unitary(CplxVec& x) {
  detail::fft_radix2(x.data(), static_cast<int>(x.size()), true);
  const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : x) v *= s;
}

}  // namespace onrx

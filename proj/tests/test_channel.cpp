#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "onrx/channel.hpp"
#include "onrx/phy.hpp"

using namespace onrx;

namespace {

// Closed-form expectation of the exactly-renormalized tap powers.
// With x_l = p_l * Exp(1) and S = sum x_m, E[x_l / S] = p_l * I_l where
// I_l = int_0^inf (1 + p_l t)^-2 prod_{m != l} (1 + p_m t)^-1 dt
// (Laplace-transform identity E[x/S] = int_0^inf E[x e^{-tS}] dt).
// Evaluated by Simpson quadrature after the substitution t = u/(1-u).
double renormalized_tap_power(const std::vector<double>& p, size_t l) {
  const int n_pts = 20001;
  auto integrand = [&](double u) {
    const double t = u / (1.0 - u);
    double v = 1.0 / ((1.0 + p[l] * t) * (1.0 + p[l] * t));
    for (size_t m = 0; m < p.size(); ++m)
      if (m != l) v /= (1.0 + p[m] * t);
    const double jac = 1.0 / ((1.0 - u) * (1.0 - u));
    return v * jac;
  };
  const double h = 1.0 / (n_pts - 1);
  double acc = 0.0;
  for (int i = 0; i + 2 < n_pts; i += 2) {
    const double u0 = i * h, u1 = (i + 1) * h, u2 = (i + 2) * h;
    acc += h / 3.0 * (integrand(u0) + 4.0 * integrand(u1) + integrand(u2 >= 1.0 ? 1.0 - 1e-12 : u2));
  }
  return p[l] * acc;
}

// Frequency response of the taps at subcarrier k: H_k = sum_l g_l e^{-j 2 pi k l / N}.
cplx tap_dft(const CplxVec& taps, int k, int nfft) {
  cplx acc(0, 0);
  for (size_t l = 0; l < taps.size(); ++l) {
    const double ang = -2.0 * std::numbers::pi * k * static_cast<double>(l) / nfft;
    acc += taps[l] * cplx(std::cos(ang), std::sin(ang));
  }
  return acc;
}

CplxVec naive_dft_unitary(const CplxVec& x) {
  const size_t n = x.size();
  CplxVec out(n, cplx(0, 0));
  for (size_t k = 0; k < n; ++k) {
    cplx acc(0, 0);
    for (size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * double(k) * double(t) / double(n);
      acc += x[t] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = acc / std::sqrt(double(n));
  }
  return out;
}

}  // namespace

TEST_CASE("sample_channel: single tap is unit magnitude") {
  ChannelProfile prof;
  prof.n_taps = 1;
  const auto ch = sample_channel(42, prof);
  REQUIRE(ch.taps.size() == 1);
  REQUIRE(std::abs(std::abs(ch.taps[0]) - 1.0) < 1e-12);
}

TEST_CASE("sample_channel: deterministic given seed") {
  ChannelProfile prof;
  const auto a = sample_channel(7, prof);
  const auto b = sample_channel(7, prof);
  const auto c = sample_channel(8, prof);
  REQUIRE(a.taps == b.taps);
  REQUIRE(a.taps != c.taps);
}

TEST_CASE("sample_channel: exact unit power per realization") {
  ChannelProfile prof;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const auto ch = sample_channel(seed, prof);
    double p = 0.0;
    for (const auto& t : ch.taps) p += std::norm(t);
    REQUIRE(std::abs(p - 1.0) < 1e-12);
  }
}

TEST_CASE("sample_channel: mean per-tap power matches renormalized profile") {
  // The exact per-realization normalization biases mean tap powers away from
  // the nominal exponential profile, so the oracle is the closed-form
  // expectation of the renormalized powers (quadrature above), not the raw
  // profile. 10k realizations, 5% tolerance.
  ChannelProfile prof;
  const auto nominal = prof.tap_powers();
  std::vector<double> acc(prof.n_taps, 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto ch = sample_channel(derive_seed(2718, i), prof);
    for (int l = 0; l < prof.n_taps; ++l) acc[l] += std::norm(ch.taps[l]);
  }
  for (int l = 0; l < prof.n_taps; ++l) {
    const double want = renormalized_tap_power(nominal, l);
    const double got = acc[l] / n;
    REQUIRE(std::abs(got / want - 1.0) < 0.05);
  }
}

TEST_CASE("sample_channel: invalid profiles rejected") {
  ChannelProfile bad;
  bad.n_taps = 0;
  REQUIRE_THROWS_AS(sample_channel(1, bad), std::invalid_argument);
  bad.n_taps = 17;
  REQUIRE_THROWS_AS(sample_channel(1, bad), std::invalid_argument);
  bad.n_taps = 5;
  bad.last_tap_decay_db = -1.0;
  REQUIRE_THROWS_AS(sample_channel(1, bad), std::invalid_argument);
}

TEST_CASE("apply_channel: flat channel is identity") {
  ChannelRealization ch;
  ch.taps = {cplx(1.0, 0.0)};
  CplxVec x = {{1, 2}, {3, 4}, {5, 6}, {0.5, -0.5}};
  REQUIRE(apply_channel(x, ch) == x);
}

TEST_CASE("apply_channel: [0,1] delays by one sample") {
  ChannelRealization ch;
  ch.taps = {cplx(0.0, 0.0), cplx(1.0, 0.0)};
  CplxVec x = {{1, 0}, {2, 0}, {3, 0}, {4, 0}};
  const CplxVec y = apply_channel(x, ch);
  REQUIRE(std::abs(y[0]) < 1e-15);
  for (size_t n = 1; n < x.size(); ++n) REQUIRE(std::abs(y[n] - x[n - 1]) < 1e-15);
}

TEST_CASE("apply_channel: noiseless LTF spectrum equals tap DFT") {
  OfdmConfig cfg;
  ChannelProfile prof;
  const auto ch = sample_channel(1234, prof);
  const CplxVec rx = apply_channel(lltf_time(cfg), ch);

  // second LTF symbol (its CP region has fully absorbed the channel memory)
  CplxVec body(rx.begin() + 96, rx.begin() + 160);
  const CplxVec spec = naive_dft_unitary(body);
  const auto ks = used_carriers(cfg);
  for (size_t i = 0; i < ks.size(); ++i) {
    const cplx ls = spec[carrier_to_bin(ks[i], cfg)] / cplx(double(kLtfSequence[i]), 0.0);
    const cplx want = tap_dft(ch.taps, ks[i], cfg.nfft);
    REQUIRE(std::abs(ls - want) < 1e-9);
  }
}

TEST_CASE("add_awgn: noiseless flag passes input through") {
  CplxVec x = {{1, 1}, {2, -1}, {0, 3}};
  const CplxVec y = add_awgn(x, std::numeric_limits<double>::infinity(), 9);
  REQUIRE(y == x);
}

TEST_CASE("add_awgn: empirical SNR near target") {
  OfdmConfig cfg;
  const PacketBits p = make_packet_bits(55, cfg);
  const CplxVec frame = build_frame(p, cfg, 0x5d).full_time();
  const double p_sig = mean_power(frame);

  double noise_acc = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const CplxVec y = add_awgn(frame, 10.0, derive_seed(17, t));
    for (size_t n = 0; n < frame.size(); ++n) noise_acc += std::norm(y[n] - frame[n]);
  }
  const double snr_emp = 10.0 * std::log10(p_sig / (noise_acc / trials / frame.size()));
  REQUIRE(std::abs(snr_emp - 10.0) < 0.3);
}

TEST_CASE("add_awgn: seed changes noise, not signal") {
  CplxVec x(512, cplx(1.0, 0.0));
  const CplxVec a = add_awgn(x, 10.0, 1);
  const CplxVec b = add_awgn(x, 10.0, 2);
  REQUIRE(a != b);
  // both sit around the same signal: means close to 1
  cplx ma(0, 0), mb(0, 0);
  for (size_t i = 0; i < x.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(x.size());
  mb /= double(x.size());
  REQUIRE(std::abs(ma - cplx(1, 0)) < 0.1);
  REQUIRE(std::abs(mb - cplx(1, 0)) < 0.1);
}

TEST_CASE("add_awgn: zero-power frame rejected") {
  CplxVec zeros(64, cplx(0, 0));
  REQUIRE_THROWS_AS(add_awgn(zeros, 10.0, 1), std::invalid_argument);
}

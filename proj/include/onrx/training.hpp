#pragma once

// Training pipelines for the three learned receiver blocks, plus the
// dataset builders that feed them and small held-out evaluation probes.
//
// Channel estimator and demapper train in double precision and are stored
// as 32-bit models; the decoder trains in single precision because its
// recurrent trunk is two orders of magnitude more expensive per step.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "onrx/channel.hpp"
#include "onrx/nn/adam.hpp"
#include "onrx/nn/losses.hpp"
#include "onrx/nn/models.hpp"
#include "onrx/phy.hpp"
#include "onrx/rx_classical.hpp"
#include "onrx/rx_nn.hpp"

namespace onrx {

// Thrown when a training loss turns non-finite. The CLI maps it to its own
// exit code so scripted pipelines can distinguish divergence from bad input.
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  int batch = 64;
  int max_epochs = 200;  // upper bound; early stopping usually ends sooner
  int patience = 10;     // epochs without validation improvement before stopping
  double val_frac = 0.10;
  uint64_t seed = 1;
  std::string log_path;  // optional CSV loss curve (epoch,train_loss,val_loss)

  // Recurrent-decoder specifics. Full 8256-step sequences do not fit a
  // sensible optimizer step, so the decoder trains on sampled windows with
  // the window edges excluded from the loss unless they coincide with a
  // true sequence boundary.
  int bptt_window = 128;
  int bptt_margin = 16;
  int bptt_batch = 48;
  int batches_per_epoch = 1200;
  double max_minutes = 0.0;  // wall-clock safety stop, 0 = off. When it
                             // triggers, run-to-run reproducibility is lost.
};

// Optional per-minibatch callbacks, used by the compression passes.
// pre_forward fires before each training forward pass, pre_step after the
// gradients for the minibatch are accumulated and just before the optimizer
// update. Both receive the live parameter list of the model being trained,
// in its canonical all_params() order. Validation passes run with the
// parameters as pre_step left them, i.e. on the master weights.
template <typename S>
struct TrainHooks {
  std::function<void(const std::vector<ParamRef<S>>&)> pre_forward;
  std::function<void(const std::vector<ParamRef<S>>&)> pre_step;
};

namespace detail {

// Fisher-Yates with a plain modulo draw: deterministic across platforms,
// unlike std::shuffle whose distribution is implementation-defined.
inline void shuffle_indices(std::vector<size_t>& idx, std::mt19937_64& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

template <typename S>
std::vector<AlignedVec<S>> snapshot_params(const std::vector<ParamRef<S>>& ps) {
  std::vector<AlignedVec<S>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.value->data);
  return out;
}

template <typename S>
void restore_params(const std::vector<ParamRef<S>>& ps,
                    const std::vector<AlignedVec<S>>& snap) {
  for (size_t i = 0; i < ps.size(); ++i) ps[i].value->data = snap[i];
}

class TrainLog {
 public:
  explicit TrainLog(const std::string& path) {
    if (!path.empty()) {
      f_.open(path);
      if (f_) f_ << "epoch,train_loss,val_loss\n";
    }
  }
  void row(int epoch, double train_loss, double val_loss) {
    if (f_) {
      f_ << epoch << ',' << train_loss << ',' << val_loss << '\n';
      f_.flush();
    }
  }

 private:
  std::ofstream f_;
};

inline void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss))
    throw TrainingDivergence(std::string(what) + " training diverged (non-finite loss)");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Channel estimator
// ---------------------------------------------------------------------------

struct ChannelTrainingSet {
  // Noiseless received L-LTF per packet (160 samples) and its LS estimate,
  // which on clean input equals the exact channel frequency response.
  std::vector<CplxVec> lltf;
  std::vector<CsiVector> labels;
  size_t size() const { return lltf.size(); }
};

inline ChannelTrainingSet build_channel_training_set(int n_packets,
                                                     const ChannelProfile& profile,
                                                     uint64_t seed,
                                                     const OfdmConfig& cfg = {}) {
  if (n_packets <= 0) throw std::invalid_argument("n_packets must be positive");
  ChannelTrainingSet set;
  set.lltf.reserve(static_cast<size_t>(n_packets));
  set.labels.reserve(static_cast<size_t>(n_packets));
  const CplxVec clean = lltf_time(cfg);
  for (int i = 0; i < n_packets; ++i) {
    const auto ch = sample_channel(derive_seed(seed, static_cast<uint64_t>(i), 11), profile);
    CplxVec rx = apply_channel(clean, ch);
    auto [csi, noise] = ls_estimate(rx, cfg);
    (void)noise;
    set.lltf.push_back(std::move(rx));
    set.labels.push_back(std::move(csi));
  }
  return set;
}

inline const std::vector<double>& chanest_training_snrs() {
  static const std::vector<double> grid = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0};
  return grid;
}

inline ChanestModel<double> train_channel_estimator(const ChannelTrainingSet& set,
                                                    const TrainConfig& tc,
                                                    const OfdmConfig& cfg = {},
                                                    ChanestModel<double>* warm_start = nullptr,
                                                    const TrainHooks<double>& hooks = {}) {
  const size_t n = set.size();
  if (n < 8) throw std::invalid_argument("channel training set too small");
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(tc.val_frac * double(n))));
  const size_t n_train = n - n_val;

  ChanestModel<double> model;
  model.init(derive_seed(tc.seed, 0, 21));
  if (warm_start) copy_params(warm_start->all_params(), model.all_params());

  std::mt19937_64 rng(derive_seed(tc.seed, 1, 21));

  auto params = model.all_params().params;
  Adam<double> opt(params, tc.lr);

  const auto& snrs = chanest_training_snrs();
  const int in_dim = cfg.lltf_time_length();
  const int out_dim = cfg.n_used;

  // One normalized sample: input row = re or im of (lltf+noise)/s, label row =
  // re or im of H/s, with s the RMS of the noisy input. The same s is what
  // inference applies to the payload, so the network's world is self-similar
  // under input scaling.
  auto fill_sample = [&](const CplxVec& noisy, const CsiVector& label, Eigen::Index row,
                         RMat<double>& xr, RMat<double>& xi, RMat<double>& yr,
                         RMat<double>& yi) {
    const double p = mean_power(noisy);
    const double s = std::sqrt(p);
    if (!(s > 0.0)) throw std::invalid_argument("zero-power training preamble");
    for (int t = 0; t < in_dim; ++t) {
      xr(row, t) = noisy[static_cast<size_t>(t)].real() / s;
      xi(row, t) = noisy[static_cast<size_t>(t)].imag() / s;
    }
    for (int k = 0; k < out_dim; ++k) {
      yr(row, k) = label.h[static_cast<size_t>(k)].real() / s;
      yi(row, k) = label.h[static_cast<size_t>(k)].imag() / s;
    }
  };

  // Fixed validation tensors: every validation packet at every grid SNR with
  // frozen noise, so the early-stopping signal is comparable across epochs.
  const size_t n_val_rows = n_val * snrs.size();
  RMat<double> vxr(n_val_rows, in_dim), vxi(n_val_rows, in_dim);
  RMat<double> vyr(n_val_rows, out_dim), vyi(n_val_rows, out_dim);
  {
    size_t row = 0;
    for (size_t i = 0; i < n_val; ++i) {
      const size_t pkt = n_train + i;
      for (size_t si = 0; si < snrs.size(); ++si) {
        const CplxVec noisy =
            add_awgn(set.lltf[pkt], snrs[si], derive_seed(tc.seed, pkt * 97 + si, 22));
        fill_sample(noisy, set.labels[pkt], static_cast<Eigen::Index>(row), vxr, vxi, vyr, vyi);
        ++row;
      }
    }
  }

  detail::TrainLog log(tc.log_path);
  std::vector<size_t> order(n_train);
  for (size_t i = 0; i < n_train; ++i) order[i] = i;

  double best_val = std::numeric_limits<double>::infinity();
  auto best_snap = detail::snapshot_params(params);
  int stall = 0;

  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    double train_loss = 0.0;
    size_t n_batches = 0;
    for (size_t off = 0; off + 1 <= n_train; off += static_cast<size_t>(tc.batch)) {
      const size_t b = std::min<size_t>(static_cast<size_t>(tc.batch), n_train - off);
      const double snr = snrs[rng() % snrs.size()];
      RMat<double> xr(b, in_dim), xi(b, in_dim), yr(b, out_dim), yi(b, out_dim);
      for (size_t r = 0; r < b; ++r) {
        const size_t pkt = order[off + r];
        const CplxVec noisy = add_awgn(set.lltf[pkt], snr, rng());
        fill_sample(noisy, set.labels[pkt], static_cast<Eigen::Index>(r), xr, xi, yr, yi);
      }
      if (hooks.pre_forward) hooks.pre_forward(params);
      model.real.zero_grad();
      model.imag.zero_grad();
      const RMat<double> pr = model.real.forward(xr, true, &rng);
      const RMat<double> pi = model.imag.forward(xi, true, &rng);
      train_loss += mse_loss(pr, yr) + mse_loss(pi, yi);
      model.real.backward(mse_grad(pr, yr));
      model.imag.backward(mse_grad(pi, yi));
      if (hooks.pre_step) hooks.pre_step(params);
      opt.step();
      ++n_batches;
    }
    train_loss /= std::max<size_t>(1, n_batches);
    detail::check_finite(train_loss, "channel estimator");

    const RMat<double> vr = model.real.forward(vxr, false, nullptr);
    const RMat<double> vi = model.imag.forward(vxi, false, nullptr);
    const double val_loss = mse_loss(vr, vyr) + mse_loss(vi, vyi);
    detail::check_finite(val_loss, "channel estimator");
    log.row(epoch, train_loss, val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_snap = detail::snapshot_params(params);
      stall = 0;
    } else if (++stall > tc.patience) {
      break;
    }
  }
  detail::restore_params(params, best_snap);
  return model;
}

// Held-out CSI error probe: mean squared coefficient error against the
// noiseless-LS ground truth, for the network and for LS-on-noisy on the same
// packets and the same noise. The network estimate is rescaled back to the
// label's units before comparison.
template <typename S>
inline std::pair<double, double> evaluate_chanest_mse(const ChanestModel<S>& model,
                                                      const ChannelTrainingSet& set,
                                                      size_t first, size_t count,
                                                      double snr_db, uint64_t seed,
                                                      const OfdmConfig& cfg = {}) {
  if (first + count > set.size()) throw std::invalid_argument("probe range out of bounds");
  double nn_acc = 0.0, ls_acc = 0.0;
  size_t terms = 0;
  for (size_t i = first; i < first + count; ++i) {
    const CplxVec noisy = add_awgn(set.lltf[i], snr_db, derive_seed(seed, i, 23));
    const auto [nn_csi, scale] = infer_csi(model, noisy, cfg);
    const auto [ls_csi, noise] = ls_estimate(noisy, cfg);
    (void)noise;
    for (int k = 0; k < cfg.n_used; ++k) {
      const cplx truth = set.labels[i].h[static_cast<size_t>(k)];
      nn_acc += std::norm(scale * nn_csi.h[static_cast<size_t>(k)] - truth);
      ls_acc += std::norm(ls_csi.h[static_cast<size_t>(k)] - truth);
      ++terms;
    }
  }
  return {nn_acc / double(terms), ls_acc / double(terms)};
}

// ---------------------------------------------------------------------------
// Demapper
// ---------------------------------------------------------------------------

struct DemapperTrainingSet {
  // One row per data symbol: equalized I/Q and the 4 mapper input bits
  // packed in the low nibble (bit b stored at 1<<b).
  std::vector<float> iq;        // 2 floats per row
  std::vector<uint8_t> labels;  // 1 nibble per row
  size_t rows() const { return labels.size(); }
};

inline DemapperTrainingSet build_demapper_training_set(int n_packets, double snr_db,
                                                       const ChannelProfile& profile,
                                                       uint64_t seed,
                                                       const OfdmConfig& cfg = {}) {
  if (n_packets <= 0) throw std::invalid_argument("n_packets must be positive");
  DemapperTrainingSet set;
  const size_t rows = static_cast<size_t>(n_packets) * static_cast<size_t>(cfg.n_payload_symbols());
  set.iq.reserve(rows * 2);
  set.labels.reserve(rows);
  const uint32_t scrambler_seed = 0x5d;
  for (int i = 0; i < n_packets; ++i) {
    const uint64_t pseed = derive_seed(seed, static_cast<uint64_t>(i), 31);
    const PacketBits pkt = make_packet_bits(derive_seed(pseed, 0), cfg);
    const TxFrame tx = build_frame(pkt, cfg, scrambler_seed);
    const auto ch = sample_channel(derive_seed(pseed, 1), profile);
    const CplxVec faded = apply_channel(tx.full_time(), ch);
    const CplxVec rx = add_awgn(faded, snr_db, derive_seed(pseed, 2));

    const CplxVec lltf(rx.begin(), rx.begin() + cfg.lltf_time_length());
    const CplxVec payload(rx.begin() + cfg.lltf_time_length(), rx.end());
    const auto [csi, noise] = ls_estimate(lltf, cfg);
    (void)noise;
    const Grid grid = ofdm_demodulate(payload, cfg);
    const Grid eq = equalize(grid, csi, cfg);

    // labels travel the exact transmitter path: scramble, encode, interleave
    const BitVec scrambled = scrambled_tx_bits(pkt, scrambler_seed, cfg);
    const BitVec coded = convolutional_encode(scrambled);
    const BitVec mapped = interleave(coded, cfg.n_cbps(), cfg.bits_per_symbol);

    for (int s = 0; s < cfg.n_ofdm_symbols; ++s) {
      for (int d = 0; d < cfg.n_data; ++d) {
        const cplx y = eq.at(s, d);
        set.iq.push_back(static_cast<float>(y.real()));
        set.iq.push_back(static_cast<float>(y.imag()));
        const size_t base = (static_cast<size_t>(s) * cfg.n_data + d) * 4;
        uint8_t nib = 0;
        for (int b = 0; b < 4; ++b) nib |= static_cast<uint8_t>(mapped[base + b] << b);
        set.labels.push_back(nib);
      }
    }
  }
  return set;
}

inline DemapperModel<double> train_demapper(const DemapperTrainingSet& set,
                                            const TrainConfig& tc,
                                            DemapperModel<double>* warm_start = nullptr,
                                            const TrainHooks<double>& hooks = {}) {
  const size_t n = set.rows();
  if (n < 64) throw std::invalid_argument("demapper training set too small");
  std::mt19937_64 rng(derive_seed(tc.seed, 2, 41));

  // random packet-agnostic split: permute once, last 10% is validation
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  detail::shuffle_indices(order, rng);
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(tc.val_frac * double(n))));
  const size_t n_train = n - n_val;

  DemapperModel<double> model;
  model.init(derive_seed(tc.seed, 3, 41));
  if (warm_start) copy_params(warm_start->all_params(), model.all_params());
  auto params = model.all_params().params;
  Adam<double> opt(params, tc.lr);

  auto fill = [&](size_t row_idx, Eigen::Index r, RMat<double>& x, RMat<double>& y) {
    x(r, 0) = double(set.iq[row_idx * 2]);
    x(r, 1) = double(set.iq[row_idx * 2 + 1]);
    const uint8_t nib = set.labels[row_idx];
    for (int b = 0; b < 4; ++b) y(r, b) = double((nib >> b) & 1);
  };

  auto val_loss_fn = [&]() {
    constexpr size_t kChunk = 16384;
    double acc = 0.0;
    size_t done = 0;
    while (done < n_val) {
      const size_t b = std::min(kChunk, n_val - done);
      RMat<double> x(b, 2), y(b, 4);
      for (size_t r = 0; r < b; ++r) fill(order[n_train + done + r], static_cast<Eigen::Index>(r), x, y);
      const RMat<double> p = model.net.forward(x, false, nullptr);
      acc += bce_loss(p, y) * double(b);
      done += b;
    }
    return acc / double(n_val);
  };

  detail::TrainLog log(tc.log_path);
  double best_val = std::numeric_limits<double>::infinity();
  auto best_snap = detail::snapshot_params(params);
  int stall = 0;
  std::vector<size_t> train_order(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));

  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    detail::shuffle_indices(train_order, rng);
    double train_loss = 0.0;
    size_t n_batches = 0;
    for (size_t off = 0; off < n_train; off += static_cast<size_t>(tc.batch)) {
      const size_t b = std::min<size_t>(static_cast<size_t>(tc.batch), n_train - off);
      RMat<double> x(b, 2), y(b, 4);
      for (size_t r = 0; r < b; ++r) fill(train_order[off + r], static_cast<Eigen::Index>(r), x, y);
      if (hooks.pre_forward) hooks.pre_forward(params);
      model.net.zero_grad();
      const RMat<double> p = model.net.forward(x, true, &rng);
      train_loss += bce_loss(p, y);
      model.net.backward(bce_grad(p, y));
      if (hooks.pre_step) hooks.pre_step(params);
      opt.step();
      ++n_batches;
    }
    train_loss /= std::max<size_t>(1, n_batches);
    detail::check_finite(train_loss, "demapper");

    const double val_loss = val_loss_fn();
    detail::check_finite(val_loss, "demapper");
    log.row(epoch, train_loss, val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_snap = detail::snapshot_params(params);
      stall = 0;
    } else if (++stall > tc.patience) {
      break;
    }
  }
  detail::restore_params(params, best_snap);
  return model;
}

// Fraction of correctly thresholded label bits over a row range of the set.
template <typename S>
inline double demapper_bit_accuracy(const DemapperModel<S>& model,
                                    const DemapperTrainingSet& set, size_t first,
                                    size_t count) {
  if (first + count > set.rows()) throw std::invalid_argument("probe range out of bounds");
  constexpr size_t kChunk = 16384;
  size_t correct = 0, total = 0, done = 0;
  while (done < count) {
    const size_t b = std::min(kChunk, count - done);
    RMat<S> x(b, 2);
    for (size_t r = 0; r < b; ++r) {
      x(static_cast<Eigen::Index>(r), 0) = S(set.iq[(first + done + r) * 2]);
      x(static_cast<Eigen::Index>(r), 1) = S(set.iq[(first + done + r) * 2 + 1]);
    }
    const RMat<S> p = mlp_infer(model.net, x);
    for (size_t r = 0; r < b; ++r) {
      const uint8_t nib = set.labels[first + done + r];
      for (int bit = 0; bit < 4; ++bit) {
        const int pred = p(static_cast<Eigen::Index>(r), bit) > S(0.5) ? 1 : 0;
        correct += (pred == ((nib >> bit) & 1));
        ++total;
      }
    }
    done += b;
  }
  return double(correct) / double(total);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct DecoderTrainingSet {
  // Per packet: deinterleaved soft-bit probabilities (16512) and the
  // transmitter's scrambled bits (8256).
  std::vector<std::vector<float>> probs;
  std::vector<BitVec> labels;
  size_t size() const { return probs.size(); }

  void append(DecoderTrainingSet&& other) {
    for (auto& p : other.probs) probs.push_back(std::move(p));
    for (auto& l : other.labels) labels.push_back(std::move(l));
  }
};

inline DecoderTrainingSet build_decoder_training_set(int n_packets, double snr_db,
                                                     const ChannelProfile& profile,
                                                     uint64_t seed,
                                                     const OfdmConfig& cfg = {}) {
  if (n_packets <= 0) throw std::invalid_argument("n_packets must be positive");
  DecoderTrainingSet set;
  set.probs.reserve(static_cast<size_t>(n_packets));
  set.labels.reserve(static_cast<size_t>(n_packets));
  const uint32_t scrambler_seed = 0x5d;
  for (int i = 0; i < n_packets; ++i) {
    const uint64_t pseed = derive_seed(seed, static_cast<uint64_t>(i), 51);
    const PacketBits pkt = make_packet_bits(derive_seed(pseed, 0), cfg);
    const TxFrame tx = build_frame(pkt, cfg, scrambler_seed);
    const auto ch = sample_channel(derive_seed(pseed, 1), profile);
    const CplxVec faded = apply_channel(tx.full_time(), ch);
    const CplxVec rx = add_awgn(faded, snr_db, derive_seed(pseed, 2));

    const CplxVec lltf(rx.begin(), rx.begin() + cfg.lltf_time_length());
    const CplxVec payload(rx.begin() + cfg.lltf_time_length(), rx.end());
    const auto [csi, noise] = ls_estimate(lltf, cfg);
    const Grid eq = equalize(ofdm_demodulate(payload, cfg), csi, cfg);
    const LlrVector llrs = approx_llr_demap(eq, csi, noise.sigma2, cfg);
    const LlrVector soft = deinterleave_values(llrs, cfg.n_cbps(), cfg.bits_per_symbol);

    std::vector<float> p(soft.size());
    for (size_t k = 0; k < soft.size(); ++k) p[k] = static_cast<float>(prob_from_llr(soft[k]));
    set.probs.push_back(std::move(p));
    set.labels.push_back(scrambled_tx_bits(pkt, scrambler_seed, cfg));
  }
  return set;
}

inline DecoderModel<float> train_decoder(const DecoderTrainingSet& set, const TrainConfig& tc,
                                         bool paired_input = true,
                                         DecoderModel<float>* warm_start = nullptr,
                                         const TrainHooks<float>& hooks = {}) {
  const size_t n = set.size();
  if (n < 4) throw std::invalid_argument("decoder training set too small");
  for (size_t i = 0; i < n; ++i) {
    if (set.labels[i].empty() || set.probs[i].size() != set.labels[i].size() * 2)
      throw std::invalid_argument("decoder training set lacks matched scrambled-bit labels");
  }
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(tc.val_frac * double(n))));
  const size_t n_train = n - n_val;

  DecoderModel<float> model(paired_input);
  model.init(derive_seed(tc.seed, 4, 61));
  if (warm_start) {
    if (warm_start->paired != paired_input)
      throw std::invalid_argument("warm start decoder has a different input convention");
    copy_params(warm_start->all_params(), model.all_params());
  }
  auto params = model.all_params().params;
  Adam<float> opt(params, static_cast<float>(tc.lr));
  std::mt19937_64 rng(derive_seed(tc.seed, 5, 61));

  const int in_dim = model.trunk.input_size();
  const int64_t n_label_bits = static_cast<int64_t>(set.labels[0].size());
  const int64_t steps_total = paired_input ? n_label_bits : n_label_bits * 2;
  const int64_t tw = std::min<int64_t>(tc.bptt_window, steps_total);
  const int64_t margin = std::min<int64_t>(tc.bptt_margin, tw / 4);
  const int64_t bb = tc.bptt_batch;

  // A window starting at step s covers trunk steps [s, s+tw). Loss weights
  // zero out the margins except where the window touches a true sequence
  // edge, where the zero initial state matches full-sequence inference.
  auto build_window_batch = [&](const std::vector<int64_t>& pkts,
                                const std::vector<int64_t>& starts, RMat<float>& x,
                                RMat<float>& y, RMat<float>& w) {
    const int64_t b = static_cast<int64_t>(pkts.size());
    x.resize(tw * b, in_dim);
    y.resize(tw * b, 1);
    w.resize(tw * b, 1);
    for (int64_t t = 0; t < tw; ++t) {
      for (int64_t r = 0; r < b; ++r) {
        const auto& probs = set.probs[static_cast<size_t>(pkts[r])];
        const auto& labels = set.labels[static_cast<size_t>(pkts[r])];
        const int64_t s = starts[r];
        const int64_t row = t * b + r;
        if (paired_input) {
          x(row, 0) = probs[static_cast<size_t>(2 * (s + t))];
          x(row, 1) = probs[static_cast<size_t>(2 * (s + t) + 1)];
          y(row, 0) = float(labels[static_cast<size_t>(s + t)]);
          const bool left_ok = (t >= margin) || (s == 0);
          const bool right_ok = (t < tw - margin) || (s + tw == steps_total);
          w(row, 0) = (left_ok && right_ok) ? 1.0f : 0.0f;
        } else {
          x(row, 0) = probs[static_cast<size_t>(s + t)];
          const bool odd = ((s + t) % 2) == 1;
          y(row, 0) = odd ? float(labels[static_cast<size_t>((s + t) / 2)]) : 0.0f;
          const bool left_ok = (t >= margin) || (s == 0);
          const bool right_ok = (t < tw - margin) || (s + tw == steps_total);
          w(row, 0) = (odd && left_ok && right_ok) ? 1.0f : 0.0f;
        }
      }
    }
  };

  auto sample_start = [&]() -> int64_t {
    const uint64_t u = rng() % 100;
    if (u < 3) return 0;
    if (u < 6) return steps_total - tw;
    return static_cast<int64_t>(rng() % static_cast<uint64_t>(steps_total - tw + 1));
  };

  // Fixed validation windows drawn once from the validation packets.
  const int64_t n_val_windows = 64;
  RMat<float> vx, vy, vw;
  {
    std::mt19937_64 vrng(derive_seed(tc.seed, 6, 61));
    std::vector<int64_t> pkts, starts;
    for (int64_t i = 0; i < n_val_windows; ++i) {
      pkts.push_back(static_cast<int64_t>(n_train + vrng() % n_val));
      const uint64_t u = vrng() % 100;
      int64_t s;
      if (u < 3)
        s = 0;
      else if (u < 6)
        s = steps_total - tw;
      else
        s = static_cast<int64_t>(vrng() % static_cast<uint64_t>(steps_total - tw + 1));
      starts.push_back(s);
    }
    build_window_batch(pkts, starts, vx, vy, vw);
  }

  auto val_loss_fn = [&]() {
    const RMat<float> h = model.trunk.infer(vx, tw, n_val_windows);
    const RMat<float> p = mlp_infer(model.head, h);
    return double(bce_loss_weighted(p, vy, vw));
  };

  detail::TrainLog log(tc.log_path);
  double best_val = std::numeric_limits<double>::infinity();
  auto best_snap = detail::snapshot_params(params);
  int stall = 0;
  const auto t_start = std::chrono::steady_clock::now();
  bool out_of_time = false;

  for (int epoch = 0; epoch < tc.max_epochs && !out_of_time; ++epoch) {
    double train_loss = 0.0;
    for (int bidx = 0; bidx < tc.batches_per_epoch; ++bidx) {
      std::vector<int64_t> pkts(static_cast<size_t>(bb)), starts(static_cast<size_t>(bb));
      for (int64_t r = 0; r < bb; ++r) {
        pkts[static_cast<size_t>(r)] = static_cast<int64_t>(rng() % n_train);
        starts[static_cast<size_t>(r)] = sample_start();
      }
      RMat<float> x, y, w;
      build_window_batch(pkts, starts, x, y, w);

      if (hooks.pre_forward) hooks.pre_forward(params);
      model.trunk.zero_grad();
      model.head.zero_grad();
      const RMat<float> h = model.trunk.forward(x, tw, bb);
      const RMat<float> p = model.head.forward(h, true, &rng);
      const double loss = double(bce_loss_weighted(p, y, w));
      detail::check_finite(loss, "decoder");
      train_loss += loss;
      const RMat<float> dh = model.head.backward(bce_grad_weighted(p, y, w));
      model.trunk.backward(dh);
      if (hooks.pre_step) hooks.pre_step(params);
      opt.step();

      if (tc.max_minutes > 0.0) {
        const double mins =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() / 60.0;
        if (mins > tc.max_minutes) {
          out_of_time = true;
          break;
        }
      }
    }
    train_loss /= std::max(1, tc.batches_per_epoch);

    const double val_loss = val_loss_fn();
    detail::check_finite(val_loss, "decoder");
    log.row(epoch, train_loss, val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_snap = detail::snapshot_params(params);
      stall = 0;
    } else if (++stall > tc.patience) {
      break;
    }
  }
  detail::restore_params(params, best_snap);
  return model;
}

// Decoded-bit accuracy of the model over full packets of a set.
template <typename S>
inline double decoder_bit_accuracy(const DecoderModel<S>& model, const DecoderTrainingSet& set,
                                   size_t first, size_t count) {
  if (first + count > set.size()) throw std::invalid_argument("probe range out of bounds");
  size_t correct = 0, total = 0;
  constexpr size_t kBatch = 16;
  size_t done = 0;
  while (done < count) {
    const size_t b = std::min(kBatch, count - done);
    std::vector<LlrVector> llrs(b);
    std::vector<const LlrVector*> ptrs(b);
    for (size_t r = 0; r < b; ++r) {
      const auto& probs = set.probs[first + done + r];
      llrs[r].resize(probs.size());
      for (size_t k = 0; k < probs.size(); ++k) llrs[r][k] = llr_from_prob(double(probs[k]));
      ptrs[r] = &llrs[r];
    }
    const auto bits = infer_decode_batch(model, ptrs);
    for (size_t r = 0; r < b; ++r) {
      const BitVec& label = set.labels[first + done + r];
      for (size_t k = 0; k < label.size(); ++k) correct += (bits[r][k] == label[k]);
      total += label.size();
    }
    done += b;
  }
  return double(correct) / double(total);
}

}  // namespace onrx

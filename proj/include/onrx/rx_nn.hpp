#pragma once

// Neural drop-in replacements for the classical receiver blocks, plus the
// block-masked receiver that runs any classical/NN combination end to end.
// Each adapter consumes and produces exactly the classical block's types, so
// the chain composes identically in all eight configurations. Descrambling
// is always classical.

#include "onrx/nn/models.hpp"
#include "onrx/nn/losses.hpp"
#include "onrx/rx_classical.hpp"

namespace onrx {

// Which blocks run as neural networks (true) instead of classical (false).
struct RxBlockMask {
  bool chanest = false;
  bool demapper = false;
  bool decoder = false;
};

// Non-owning bundle of the loaded models; only the blocks selected by the
// mask need to be present.
template <class S>
struct NnSuite {
  ChanestModel<S>* chanest = nullptr;
  DemapperModel<S>* demapper = nullptr;
  DecoderModel<S>* decoder = nullptr;
};

// p(bit=1) from an LLR under the log(P0/P1) convention, and back.
inline double prob_from_llr(double llr) { return 1.0 / (1.0 + std::exp(llr)); }
inline double llr_from_prob(double p) {
  const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return std::log((1.0 - pc) / pc);
}

// Cache-free MLP forward pass (eval mode) for inference-heavy paths; the
// training forward in Mlp keeps per-layer caches which this avoids. When a
// counter is supplied, every matrix product adds the weight multiplies it
// performs (prune-masked weights excluded).
template <class S>
RMat<S> mlp_infer(const Mlp<S>& mlp, RMat<S> h, int64_t* mult_counter = nullptr) {
  for (const auto& l : mlp.layers()) {
    const LayerSpec spec = l->spec();
    switch (spec.kind) {
      case LayerKind::linear: {
        const auto* lin = dynamic_cast<const LinearLayer<S>*>(l.get());
        if (mult_counter)
          *mult_counter += h.rows() * live_count(lin->weight().numel(), lin->mask());
        RMat<S> y = h * lin->weight().mat().transpose();
        y.rowwise() += Eigen::Map<const RVec<S>>(lin->bias().data.data(), lin->bias().numel());
        h = std::move(y);
        break;
      }
      case LayerKind::relu:
        h = h.cwiseMax(S(0));
        break;
      case LayerKind::sigmoid:
        h = (S(1) / (S(1) + (-h.array()).exp())).matrix();
        break;
      case LayerKind::dropout:
        break;  // identity in eval mode
      default:
        throw std::invalid_argument("mlp_infer: unsupported layer kind");
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Channel estimator adapter. The model sees the RMS-normalized time-domain
// preamble; the returned scale factor must divide the payload before
// equalization so CSI and payload stay commensurate.
// ---------------------------------------------------------------------------

template <class S>
std::pair<CsiVector, double> infer_csi(const ChanestModel<S>& model, const CplxVec& lltf,
                                       const OfdmConfig& cfg = {},
                                       int64_t* mult_counter = nullptr) {
  if (static_cast<int>(lltf.size()) != cfg.lltf_time_length())
    throw std::invalid_argument("preamble length mismatch");
  const double power = mean_power(lltf);
  if (!(power > 0.0)) throw std::invalid_argument("zero-power preamble");
  const double scale = std::sqrt(power);

  RMat<S> xr(1, cfg.lltf_time_length()), xi(1, cfg.lltf_time_length());
  for (size_t i = 0; i < lltf.size(); ++i) {
    xr(0, static_cast<int64_t>(i)) = static_cast<S>(lltf[i].real() / scale);
    xi(0, static_cast<int64_t>(i)) = static_cast<S>(lltf[i].imag() / scale);
  }
  const RMat<S> yr = mlp_infer(model.real, std::move(xr), mult_counter);
  const RMat<S> yi = mlp_infer(model.imag, std::move(xi), mult_counter);

  CsiVector csi;
  csi.h.resize(static_cast<size_t>(cfg.n_used));
  for (int i = 0; i < cfg.n_used; ++i)
    csi.h[static_cast<size_t>(i)] = cplx(double(yr(0, i)), double(yi(0, i)));
  return {csi, scale};
}

// ---------------------------------------------------------------------------
// Demapper adapter. Per equalized symbol the net emits four p(bit=1); LLRs
// are log((1-p)/p) scaled by the classical |h_k|^2/sigma^2 factor and
// clamped like the classical path.
// ---------------------------------------------------------------------------

template <class S>
LlrVector infer_llr(const DemapperModel<S>& model, const Grid& eq_symbols, const CsiVector& csi,
                    double sigma2, const OfdmConfig& cfg, double clamp = kDefaultLlrClamp,
                    int64_t* mult_counter = nullptr) {
  if (eq_symbols.cols != cfg.n_data) throw std::invalid_argument("expected data-only grid");
  const int64_t n_sym = eq_symbols.rows;
  RMat<S> x(n_sym * cfg.n_data, 2);
  for (int64_t sym = 0; sym < n_sym; ++sym)
    for (int d = 0; d < cfg.n_data; ++d) {
      const cplx y = eq_symbols.at(static_cast<int>(sym), d);
      x(sym * cfg.n_data + d, 0) = static_cast<S>(y.real());
      x(sym * cfg.n_data + d, 1) = static_cast<S>(y.imag());
    }
  const RMat<S> p = mlp_infer(model.net, std::move(x), mult_counter);

  const double s2 = std::max(sigma2, 1e-12);
  const auto slot = data_slot_carrier_index(cfg);
  LlrVector out(static_cast<size_t>(n_sym) * cfg.n_data * 4);
  size_t w = 0;
  for (int64_t sym = 0; sym < n_sym; ++sym) {
    for (int d = 0; d < cfg.n_data; ++d) {
      const double h2 = std::norm(csi.h[static_cast<size_t>(slot[static_cast<size_t>(d)])]);
      const double sigma_eff2 = std::max(s2 / std::max(h2, 1e-300), 1e-300);
      for (int b = 0; b < 4; ++b) {
        const double p1 =
            std::clamp(double(p(sym * cfg.n_data + d, b)), kBceClamp, 1.0 - kBceClamp);
        const double llr = std::log((1.0 - p1) / p1) / sigma_eff2;
        out[w++] = std::clamp(llr, -clamp, clamp);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoder adapter. Soft bits arrive as deinterleaved LLRs; the net consumes
// their p(1) probabilities and emits one probability per information bit.
// ---------------------------------------------------------------------------

// Decodes a batch of equal-length packets in one recurrent pass. The batch
// dimension only widens the matrix rows, so results are independent of how
// packets are grouped up to floating-point reduction order.
template <class S>
std::vector<BitVec> infer_decode_batch(const DecoderModel<S>& model,
                                       const std::vector<const LlrVector*>& packets,
                                       int64_t* mult_counter = nullptr) {
  if (packets.empty()) return {};
  const int64_t B = static_cast<int64_t>(packets.size());
  const size_t n_soft = packets[0]->size();
  if (n_soft == 0 || n_soft % 2 != 0)
    throw std::invalid_argument("soft-bit count must be a positive multiple of 2");
  for (const auto* p : packets)
    if (p->size() != n_soft) throw std::invalid_argument("ragged decoder batch");

  const int64_t T = model.paired ? static_cast<int64_t>(n_soft) / 2
                                 : static_cast<int64_t>(n_soft);
  RMat<S> x(T * B, model.paired ? 2 : 1);
  for (int64_t b = 0; b < B; ++b) {
    const LlrVector& llr = *packets[static_cast<size_t>(b)];
    if (model.paired) {
      for (int64_t t = 0; t < T; ++t) {
        x(t * B + b, 0) = static_cast<S>(prob_from_llr(llr[static_cast<size_t>(2 * t)]));
        x(t * B + b, 1) = static_cast<S>(prob_from_llr(llr[static_cast<size_t>(2 * t + 1)]));
      }
    } else {
      for (int64_t t = 0; t < T; ++t)
        x(t * B + b, 0) = static_cast<S>(prob_from_llr(llr[static_cast<size_t>(t)]));
    }
  }

  RMat<S> features = model.trunk.infer(x, T, B, mult_counter);
  x.resize(0, 0);

  const int64_t n_out = static_cast<int64_t>(n_soft) / 2;
  if (!model.paired) {
    // stride-2 head: one output per code-bit pair, taken at the second step
    RMat<S> picked(n_out * B, features.cols());
    for (int64_t t = 0; t < n_out; ++t)
      picked.middleRows(t * B, B) = features.middleRows((2 * t + 1) * B, B);
    features = std::move(picked);
  }
  const RMat<S> probs = mlp_infer(model.head, std::move(features), mult_counter);

  std::vector<BitVec> out(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    BitVec bits(static_cast<size_t>(n_out));
    for (int64_t t = 0; t < n_out; ++t)
      bits[static_cast<size_t>(t)] = probs(t * B + b, 0) > S(0.5) ? 1 : 0;
    out[static_cast<size_t>(b)] = std::move(bits);
  }
  return out;
}

template <class S>
BitVec infer_decode(const DecoderModel<S>& model, const LlrVector& deint_llrs) {
  const LlrVector* one[] = {&deint_llrs};
  return infer_decode_batch(model, {one[0]})[0];
}

// ---------------------------------------------------------------------------
// Block-masked receiver.
// ---------------------------------------------------------------------------

// Everything up to (and excluding) the decoder: returns deinterleaved LLRs
// ready for either Viterbi or the decoder net. Lets the harness batch the
// expensive recurrent decode across packets.
template <class S>
LlrVector nn_front_end_llrs(const CplxVec& frame_rx, const NnSuite<S>& models,
                            const RxBlockMask& mask, const OfdmConfig& cfg,
                            double llr_clamp = kDefaultLlrClamp, RxChainDebug* dbg = nullptr) {
  if (static_cast<int>(frame_rx.size()) != cfg.frame_time_length())
    throw std::invalid_argument("frame length mismatch");
  if (mask.chanest && !models.chanest)
    throw std::invalid_argument("chanest selected as NN but no model given");
  if (mask.demapper && !models.demapper)
    throw std::invalid_argument("demapper selected as NN but no model given");

  const CplxVec lltf(frame_rx.begin(), frame_rx.begin() + cfg.lltf_time_length());
  CplxVec payload(frame_rx.begin() + cfg.lltf_time_length(), frame_rx.end());

  CsiVector csi;
  double sigma2 = 0.0;
  double scale = 1.0;
  if (mask.chanest) {
    // noise level still comes from the preamble repetition, rescaled into
    // the normalized domain the NN CSI lives in
    const auto ls = ls_estimate(lltf, cfg);
    auto [h, s] = infer_csi(*models.chanest, lltf, cfg);
    csi = std::move(h);
    scale = s;
    sigma2 = ls.second.sigma2 / (s * s);
    for (auto& v : payload) v /= s;
  } else {
    auto [h, noise] = ls_estimate(lltf, cfg);
    csi = std::move(h);
    sigma2 = noise.sigma2;
  }

  const Grid sym = ofdm_demodulate(payload, cfg);
  const Grid eq = equalize(sym, csi, cfg);
  const LlrVector llrs = mask.demapper
                             ? infer_llr(*models.demapper, eq, csi, sigma2, cfg, llr_clamp)
                             : approx_llr_demap(eq, csi, sigma2, cfg, llr_clamp);
  if (dbg) {
    dbg->csi = csi;
    dbg->sigma2 = sigma2;
    dbg->rms_scale = scale;
  }
  return deinterleave_values(llrs, cfg.n_cbps(), cfg.bits_per_symbol);
}

template <class S>
BitVec run_nn_rx(const CplxVec& frame_rx, const NnSuite<S>& models, const RxBlockMask& mask,
                 const OfdmConfig& cfg, uint32_t scrambler_seed,
                 double llr_clamp = kDefaultLlrClamp, RxChainDebug* dbg = nullptr) {
  if (mask.decoder && !models.decoder)
    throw std::invalid_argument("decoder selected as NN but no model given");
  const LlrVector deint = nn_front_end_llrs(frame_rx, models, mask, cfg, llr_clamp, dbg);
  const BitVec decoded =
      mask.decoder ? infer_decode(*models.decoder, deint) : viterbi_decode(deint);
  return descramble(decoded, scrambler_seed);
}

}  // namespace onrx

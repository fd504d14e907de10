#pragma once

// FLOPs accounting for the receiver blocks, classical and neural. The
// reference comparison this module reproduces mixes two conventions, and its
// figures only back-calculate from the architecture dimensions under a
// per-row split, so both conventions are first-class and every reported
// number names the one it uses:
//
//   mults_only  1 FLOP per surviving weight multiply, biases excluded
//               (the dense rows: channel estimator and demapper)
//   mac2        2 FLOPs per multiply-accumulate (the recurrent decoder row)
//
// Analytical counts walk the model structure and respect prune masks; the
// inference paths carry optional runtime multiply counters (mlp_infer,
// BiGru::infer, viterbi_decode) so every analytical figure can be checked
// against what the code actually executes.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>

#include "onrx/rx_nn.hpp"

namespace onrx {

enum class FlopsConvention : uint8_t { mults_only = 0, mac2 = 1 };

inline const char* flops_convention_name(FlopsConvention c) {
  return c == FlopsConvention::mac2 ? "mac2" : "mults_only";
}

inline int64_t flops_from_mults(int64_t mults, FlopsConvention c) {
  return c == FlopsConvention::mac2 ? 2 * mults : mults;
}

// ---------------------------------------------------------------------------
// Analytical multiply counts. All counts are per packet and mask-aware:
// a pruned weight contributes nothing.
// ---------------------------------------------------------------------------

// Weight multiplies for one row pushed through a feed-forward stack.
// Activations, dropout (identity at inference), and biases cost nothing
// under either convention.
template <class S>
int64_t mlp_mults_per_row(const Mlp<S>& mlp) {
  int64_t n = 0;
  for (const auto& l : mlp.layers()) {
    switch (l->spec().kind) {
      case LayerKind::linear: {
        const auto* lin = dynamic_cast<const LinearLayer<S>*>(l.get());
        n += live_count(lin->weight().numel(), lin->mask());
        break;
      }
      case LayerKind::relu:
      case LayerKind::sigmoid:
      case LayerKind::dropout:
        break;
      default:
        throw std::invalid_argument("count_model_flops: unknown layer kind");
    }
  }
  return n;
}

// Weight multiplies for one timestep of the full recurrent stack: per layer
// and direction the input and hidden projections contribute their surviving
// weights (3*(in*h + h*h) when dense).
template <class S>
int64_t gru_mults_per_step(const BiGru<S>& g) {
  int64_t n = 0;
  for (int64_t l = 0; l < g.n_layers(); ++l)
    for (int64_t d = 0; d < g.n_directions(); ++d) {
      const auto& p = g.dir(l, d);
      n += live_count(p.w_ih.numel(), p.mask_ih);
      n += live_count(p.w_hh.numel(), p.mask_hh);
    }
  return n;
}

template <class S>
int64_t chanest_mults_per_packet(const ChanestModel<S>& m) {
  return mlp_mults_per_row(m.real) + mlp_mults_per_row(m.imag);
}

template <class S>
int64_t demapper_mults_per_packet(const DemapperModel<S>& m, const OfdmConfig& cfg = {}) {
  return cfg.n_payload_symbols() * mlp_mults_per_row(m.net);
}

// The trunk runs once per timestep (one per soft-bit pair in the paired
// convention, one per soft bit in the scalar convention); the head runs once
// per decoded bit either way.
template <class S>
int64_t decoder_mults_per_packet(const DecoderModel<S>& m, const OfdmConfig& cfg = {}) {
  const int64_t n_soft = cfg.n_coded_bits();
  const int64_t steps = m.paired ? n_soft / 2 : n_soft;
  return steps * gru_mults_per_step(m.trunk) + (n_soft / 2) * mlp_mults_per_row(m.head);
}

template <class S>
int64_t count_model_flops(const ChanestModel<S>& m, FlopsConvention c) {
  return flops_from_mults(chanest_mults_per_packet(m), c);
}

template <class S>
int64_t count_model_flops(const DemapperModel<S>& m, FlopsConvention c,
                          const OfdmConfig& cfg = {}) {
  return flops_from_mults(demapper_mults_per_packet(m, cfg), c);
}

template <class S>
int64_t count_model_flops(const DecoderModel<S>& m, FlopsConvention c,
                          const OfdmConfig& cfg = {}) {
  return flops_from_mults(decoder_mults_per_packet(m, cfg), c);
}

// ---------------------------------------------------------------------------
// Classical block counts.
// ---------------------------------------------------------------------------

struct ClassicalFlopsParams {
  // Approximate-LLR demapping cost per generated soft bit for 16-QAM: the
  // distance of each equalized symbol to every constellation point plus the
  // per-bit minimum search. Overridable for other demapper implementations.
  double demapper_flops_per_soft_bit = 82.0;
};

// Preamble-based estimation: two radix-2 transforms of the long-training
// repeats (5*N*log2(N) real operations each), one complex division per used
// carrier against the known training symbol (4 multiplies for the
// conjugate-product numerator, 2 multiplies and 1 add for the squared
// magnitude, 2 real divisions -> 8 counted operations, additions free under
// the multiplies-and-divides accounting), and a scaled average of the two
// repeats (2 multiplies per carrier).
inline int64_t count_classical_chanest_flops(const OfdmConfig& cfg = {}) {
  int64_t lg = 0;
  while ((int64_t(1) << (lg + 1)) <= cfg.nfft) ++lg;
  const int64_t fft = 5 * cfg.nfft * lg;
  const int64_t divisions = 8 * static_cast<int64_t>(cfg.n_used);
  const int64_t averaging = 2 * static_cast<int64_t>(cfg.n_used);
  return 2 * fft + divisions + averaging;
}

inline int64_t count_classical_demapper_flops(const OfdmConfig& cfg = {},
                                              const ClassicalFlopsParams& p = {}) {
  return std::llround(p.demapper_flops_per_soft_bit * static_cast<double>(cfg.n_coded_bits()));
}

// Commonly quoted cost figure for 64-state soft-input Viterbi decoding of a
// 16512-soft-bit block; reports carry it alongside the instrumented count
// from this build's decoder, which tallies far fewer operations.
inline constexpr int64_t kViterbiReferenceFlops = 560'000'000;

// Runs the actual decoder once with the operation counter attached. The
// count depends only on the soft-bit count, not the values.
inline ViterbiOpCount measure_viterbi_ops(const OfdmConfig& cfg = {}) {
  const LlrVector llrs(static_cast<size_t>(cfg.n_coded_bits()), 1.0);
  ViterbiOpCount ops;
  viterbi_decode(llrs, &ops);
  return ops;
}

enum class RxBlock : uint8_t { chanest = 0, demapper = 1, decoder = 2 };

// Classical cost of one block at the given geometry. The decoder entry is
// the reference figure; measure_viterbi_ops() gives this build's own count.
inline int64_t count_classical_flops(RxBlock block, const OfdmConfig& cfg = {},
                                     const ClassicalFlopsParams& p = {}) {
  switch (block) {
    case RxBlock::chanest:
      return count_classical_chanest_flops(cfg);
    case RxBlock::demapper:
      return count_classical_demapper_flops(cfg, p);
    case RxBlock::decoder:
      return kViterbiReferenceFlops;
  }
  throw std::invalid_argument("count_classical_flops: unknown block");
}

// ---------------------------------------------------------------------------
// Comparison report.
// ---------------------------------------------------------------------------

// Rate-2 structured pruning with the projection's 2.5% headroom keeps at
// most 48.75% of each prunable matrix; reports use this budget figure when
// no measured model is supplied.
inline constexpr double kDefaultKeptFraction = 0.4875;

struct FlopsReportOptions {
  OfdmConfig cfg{};
  ClassicalFlopsParams classical{};
  // Budgeted kept-weight fractions, used when no measured count is given.
  double kept_chanest = kDefaultKeptFraction;
  double kept_decoder = kDefaultKeptFraction;
  // Measured multiply counts from live models (see the count_* functions);
  // negative means "use the architecture default".
  int64_t chanest_mults = -1;
  int64_t chanest_mults_compressed = -1;
  int64_t demapper_mults = -1;
  int64_t decoder_mults = -1;
  int64_t decoder_mults_compressed = -1;
  // One real decode to capture the instrumented op count (about 10 ms).
  bool run_viterbi_probe = true;
};

struct FlopsReport {
  // input geometry
  int64_t lltf_samples = 0;
  int64_t data_symbols = 0;
  int64_t soft_bits = 0;
  // channel estimator row (mults_only)
  int64_t chanest_classical = 0;
  int64_t chanest_nn = 0;
  int64_t chanest_nn_compressed = 0;
  double chanest_kept = 1.0;
  // demapper row (mults_only); quantize-only compression leaves it unchanged
  int64_t demapper_classical = 0;
  int64_t demapper_nn = 0;
  int64_t demapper_nn_compressed = 0;
  // decoder row (mac2); classical carries the reference figure plus this
  // build's instrumented operation count
  int64_t decoder_classical = 0;
  ViterbiOpCount decoder_classical_measured{};
  int64_t decoder_nn = 0;
  int64_t decoder_nn_compressed = 0;
  double decoder_kept = 1.0;
  // totals and compressed-NN-over-classical ratios
  int64_t total_classical = 0;
  int64_t total_nn = 0;
  int64_t total_nn_compressed = 0;
  double ratio_chanest = 0.0;
  double ratio_demapper = 0.0;
  double ratio_decoder = 0.0;
  double ratio_total = 0.0;

  std::string to_json() const;
  std::string to_text() const;
};

inline FlopsReport flops_comparison_report(const FlopsReportOptions& opt = {}) {
  FlopsReport r;
  r.lltf_samples = opt.cfg.lltf_time_length();
  r.data_symbols = opt.cfg.n_payload_symbols();
  r.soft_bits = opt.cfg.n_coded_bits();

  const int64_t ce_mults = opt.chanest_mults >= 0
                               ? opt.chanest_mults
                               : chanest_mults_per_packet(ChanestModel<float>{});
  const int64_t ce_mults_c = opt.chanest_mults_compressed >= 0
                                 ? opt.chanest_mults_compressed
                                 : std::llround(double(ce_mults) * opt.kept_chanest);
  r.chanest_classical = count_classical_chanest_flops(opt.cfg);
  r.chanest_nn = flops_from_mults(ce_mults, FlopsConvention::mults_only);
  r.chanest_nn_compressed = flops_from_mults(ce_mults_c, FlopsConvention::mults_only);
  r.chanest_kept = double(ce_mults_c) / double(ce_mults);

  const int64_t dm_mults = opt.demapper_mults >= 0
                               ? opt.demapper_mults
                               : demapper_mults_per_packet(DemapperModel<float>{}, opt.cfg);
  r.demapper_classical = count_classical_demapper_flops(opt.cfg, opt.classical);
  r.demapper_nn = flops_from_mults(dm_mults, FlopsConvention::mults_only);
  r.demapper_nn_compressed = r.demapper_nn;

  const int64_t dec_mults =
      opt.decoder_mults >= 0
          ? opt.decoder_mults
          : decoder_mults_per_packet(DecoderModel<float>(/*paired_input=*/false), opt.cfg);
  const int64_t dec_mults_c = opt.decoder_mults_compressed >= 0
                                  ? opt.decoder_mults_compressed
                                  : std::llround(double(dec_mults) * opt.kept_decoder);
  r.decoder_classical = kViterbiReferenceFlops;
  if (opt.run_viterbi_probe) r.decoder_classical_measured = measure_viterbi_ops(opt.cfg);
  r.decoder_nn = flops_from_mults(dec_mults, FlopsConvention::mac2);
  r.decoder_nn_compressed = flops_from_mults(dec_mults_c, FlopsConvention::mac2);
  r.decoder_kept = double(dec_mults_c) / double(dec_mults);

  r.total_classical = r.chanest_classical + r.demapper_classical + r.decoder_classical;
  r.total_nn = r.chanest_nn + r.demapper_nn + r.decoder_nn;
  r.total_nn_compressed =
      r.chanest_nn_compressed + r.demapper_nn_compressed + r.decoder_nn_compressed;
  r.ratio_chanest = double(r.chanest_nn_compressed) / double(r.chanest_classical);
  r.ratio_demapper = double(r.demapper_nn_compressed) / double(r.demapper_classical);
  r.ratio_decoder = double(r.decoder_nn_compressed) / double(r.decoder_classical);
  r.ratio_total = double(r.total_nn_compressed) / double(r.total_classical);
  return r;
}

// ---- formatting -------------------------------------------------------------

namespace detail {

inline std::string fmt_grouped(int64_t v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out;
  const size_t n = digits.size();
  for (size_t i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return v < 0 ? "-" + out : out;
}

inline std::string fmt_double(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace detail

inline std::string FlopsReport::to_json() const {
  using detail::fmt_double;
  std::ostringstream os;
  os << "{\n";
  os << "  \"geometry\": {\"lltf_samples\": " << lltf_samples
     << ", \"data_symbols\": " << data_symbols << ", \"soft_bits\": " << soft_bits << "},\n";
  os << "  \"channel_estimator\": {\"convention\": \"mults_only\", \"classical_flops\": "
     << chanest_classical << ", \"nn_flops\": " << chanest_nn
     << ", \"nn_compressed_flops\": " << chanest_nn_compressed
     << ", \"kept_weight_fraction\": " << fmt_double(chanest_kept)
     << ", \"compressed_nn_over_classical\": " << fmt_double(ratio_chanest) << "},\n";
  os << "  \"demapper\": {\"convention\": \"mults_only\", \"classical_flops\": "
     << demapper_classical << ", \"nn_flops\": " << demapper_nn
     << ", \"nn_compressed_flops\": " << demapper_nn_compressed
     << ", \"kept_weight_fraction\": 1, \"compressed_nn_over_classical\": "
     << fmt_double(ratio_demapper) << "},\n";
  os << "  \"decoder\": {\"convention\": \"mac2\", \"classical_flops\": " << decoder_classical
     << ", \"classical_measured_adds\": " << decoder_classical_measured.adds
     << ", \"classical_measured_compares\": " << decoder_classical_measured.compares
     << ", \"nn_flops\": " << decoder_nn
     << ", \"nn_compressed_flops\": " << decoder_nn_compressed
     << ", \"kept_weight_fraction\": " << fmt_double(decoder_kept)
     << ", \"compressed_nn_over_classical\": " << fmt_double(ratio_decoder) << "},\n";
  os << "  \"total\": {\"classical_flops\": " << total_classical
     << ", \"nn_flops\": " << total_nn << ", \"nn_compressed_flops\": " << total_nn_compressed
     << ", \"compressed_nn_over_classical\": " << fmt_double(ratio_total) << "}\n";
  os << "}\n";
  return os.str();
}

inline std::string FlopsReport::to_text() const {
  using detail::fmt_grouped;
  std::ostringstream os;
  os << "FLOPs per packet (preamble " << lltf_samples << " samples, " << data_symbols
     << " data symbols, " << soft_bits << " soft bits)\n\n";
  const auto row = [&os](const std::string& name, const std::string& conv,
                         const std::string& classical, const std::string& nn,
                         const std::string& nnc, const std::string& ratio) {
    os << std::left << std::setw(19) << name << std::setw(12) << conv << std::right
       << std::setw(16) << classical << std::setw(16) << nn << std::setw(16) << nnc
       << std::setw(13) << ratio << "\n";
  };
  const auto rx = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v << "x";
    return s.str();
  };
  row("block", "convention", "classical", "nn", "nn compressed", "nn/classical");
  row("channel estimator", "mults_only", fmt_grouped(chanest_classical), fmt_grouped(chanest_nn),
      fmt_grouped(chanest_nn_compressed), rx(ratio_chanest));
  row("demapper", "mults_only", fmt_grouped(demapper_classical), fmt_grouped(demapper_nn),
      fmt_grouped(demapper_nn_compressed), rx(ratio_demapper));
  row("decoder", "mac2", fmt_grouped(decoder_classical), fmt_grouped(decoder_nn),
      fmt_grouped(decoder_nn_compressed), rx(ratio_decoder));
  row("total", "", fmt_grouped(total_classical), fmt_grouped(total_nn),
      fmt_grouped(total_nn_compressed), rx(ratio_total));
  os << "\n";
  if (decoder_classical_measured.total() > 0)
    os << "decoder classical: reference figure above; this build's soft Viterbi executes "
       << fmt_grouped(decoder_classical_measured.adds) << " adds and "
       << fmt_grouped(decoder_classical_measured.compares) << " compares per packet\n";
  os << "dense rows count surviving weight multiplies only (biases excluded); the recurrent\n"
        "row counts 2 FLOPs per multiply-accumulate. compressed channel estimator and\n"
        "decoder keep "
     << detail::fmt_double(chanest_kept * 100.0, 4) << "% and "
     << detail::fmt_double(decoder_kept * 100.0, 4)
     << "% of prunable weights; the demapper is quantize-only.\n";
  return os.str();
}

}  // namespace onrx

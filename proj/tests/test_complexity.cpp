// FLOPs accounting: frozen reference figures, instrumented-counter agreement,
// and the comparison report's ratios and invariants.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>

#include "onrx/complexity.hpp"
#include "onrx/phy.hpp"

using namespace onrx;

namespace {

bool within_rel(double value, double center, double rel) {
  return std::abs(value - center) <= rel * center;
}

// Architecture dimensions restated as bare arithmetic, independent of the
// counting code under test.
constexpr int64_t kChanestRowMults = 160 * 512 + 512 * 256 + 256 * 52;    // 226,304
constexpr int64_t kDemapperRowMults = 2 * 20 + 20 * 4;                    // 120
constexpr int64_t kGruStepScalar =
    2 * (3 * (1 * 256 + 256 * 256) + 2 * 3 * (512 * 256 + 256 * 256));    // 2,754,048
constexpr int64_t kGruStepPaired =
    2 * (3 * (2 * 256 + 256 * 256) + 2 * 3 * (512 * 256 + 256 * 256));    // 2,755,584
constexpr int64_t kHeadRowMults = 512 * 16 + 16 * 1;                      // 8,208

}  // namespace

TEST_CASE("analytical multiply counts freeze the reference figures") {
  const OfdmConfig cfg;

  ChanestModel<float> ce;
  REQUIRE(chanest_mults_per_packet(ce) == 2 * kChanestRowMults);
  REQUIRE(count_model_flops(ce, FlopsConvention::mults_only) == 452'608);
  REQUIRE(within_rel(452'608.0, 4.6e5, 0.02));
  // weight multiplies = parameters minus biases
  REQUIRE(chanest_mults_per_packet(ce) == ce.param_count() - 2 * (512 + 256 + 52));

  DemapperModel<float> dm;
  REQUIRE(mlp_mults_per_row(dm.net) == kDemapperRowMults);
  REQUIRE(count_model_flops(dm, FlopsConvention::mults_only, cfg) == 495'360);
  REQUIRE(within_rel(495'360.0, 4.9e5, 0.02));

  DecoderModel<float> dec_scalar(/*paired_input=*/false);
  REQUIRE(gru_mults_per_step(dec_scalar.trunk) == kGruStepScalar);
  REQUIRE(mlp_mults_per_row(dec_scalar.head) == kHeadRowMults);
  const int64_t scalar_mults = 16512 * kGruStepScalar + 8256 * kHeadRowMults;
  REQUIRE(decoder_mults_per_packet(dec_scalar, cfg) == scalar_mults);
  REQUIRE(count_model_flops(dec_scalar, FlopsConvention::mac2, cfg) == 2 * scalar_mults);
  REQUIRE(count_model_flops(dec_scalar, FlopsConvention::mac2, cfg) == 91'085'211'648);
  REQUIRE(within_rel(91'085'211'648.0, 9.08e10, 0.02));

  DecoderModel<float> dec_paired(/*paired_input=*/true);
  REQUIRE(gru_mults_per_step(dec_paired.trunk) == kGruStepPaired);
  REQUIRE(decoder_mults_per_packet(dec_paired, cfg) ==
          8256 * kGruStepPaired + 8256 * kHeadRowMults);

  // convention arithmetic
  REQUIRE(flops_from_mults(10, FlopsConvention::mults_only) == 10);
  REQUIRE(flops_from_mults(10, FlopsConvention::mac2) == 20);
}

TEST_CASE("classical block counts") {
  const OfdmConfig cfg;
  REQUIRE(count_classical_chanest_flops(cfg) == 4'360);
  REQUIRE(count_classical_chanest_flops(cfg) == 2 * (5 * 64 * 6) + 52 * 8 + 52 * 2);
  REQUIRE(within_rel(4'360.0, 4.4e3, 0.02));

  REQUIRE(count_classical_demapper_flops(cfg) == 82 * 16512);
  REQUIRE(count_classical_demapper_flops(cfg) == 1'353'984);
  REQUIRE(within_rel(1'353'984.0, 1.3e6, 0.05));
  const ClassicalFlopsParams hundred{100.0};
  REQUIRE(count_classical_demapper_flops(cfg, hundred) == 1'651'200);

  REQUIRE(count_classical_flops(RxBlock::chanest, cfg) == 4'360);
  REQUIRE(count_classical_flops(RxBlock::demapper, cfg) == 1'353'984);
  REQUIRE(count_classical_flops(RxBlock::decoder, cfg) == kViterbiReferenceFlops);
  REQUIRE(kViterbiReferenceFlops == 560'000'000);
}

TEST_CASE("viterbi operation counter matches the trellis trip counts") {
  const OfdmConfig cfg;
  // Live-state growth: one state at the first step, doubling until all 64
  // are reachable; each live state expands two edges of 2 adds + 1 compare.
  int64_t live = 1, live_sum = 0;
  for (int64_t t = 0; t < cfg.n_coded_bits() / 2; ++t) {
    live_sum += live;
    live = std::min<int64_t>(2 * live, 64);
  }
  REQUIRE(live_sum == 528'063);

  const ViterbiOpCount ops = measure_viterbi_ops(cfg);
  REQUIRE(ops.adds == 4 * live_sum);
  REQUIRE(ops.compares == 2 * live_sum);
  REQUIRE(ops.total() == 3'168'378);

  // counting must not disturb decoding
  LlrVector llrs(64);
  for (size_t i = 0; i < llrs.size(); ++i) llrs[i] = ((int(i) % 9) - 4) * 1.7;
  ViterbiOpCount probe;
  REQUIRE(viterbi_decode(llrs, &probe) == viterbi_decode(llrs));
  REQUIRE(probe.total() > 0);
}

TEST_CASE("instrumented inference counters equal analytical counts") {
  const OfdmConfig cfg;

  SECTION("channel estimator, dense and masked") {
    ChanestModel<double> ce;
    ce.init(11);
    const CplxVec probe = lltf_time(cfg);

    int64_t counted = 0;
    infer_csi(ce, probe, cfg, &counted);
    REQUIRE(counted == chanest_mults_per_packet(ce));
    REQUIRE(counted == 452'608);

    // prune half of the first layer's weights and recount
    auto* lin = dynamic_cast<LinearLayer<double>*>(ce.real.layers()[0].get());
    REQUIRE(lin != nullptr);
    lin->mask().assign(static_cast<size_t>(lin->weight().numel()), 1);
    for (size_t i = 0; i < lin->mask().size(); i += 2) lin->mask()[i] = 0;
    const int64_t masked_expected = 452'608 - lin->weight().numel() / 2;
    REQUIRE(chanest_mults_per_packet(ce) == masked_expected);
    counted = 0;
    infer_csi(ce, probe, cfg, &counted);
    REQUIRE(counted == masked_expected);
  }

  SECTION("demapper over one packet of symbols") {
    DemapperModel<double> dm;
    dm.init(12);
    Grid eq(cfg.n_ofdm_symbols, cfg.n_data);
    for (int r = 0; r < eq.rows; ++r)
      for (int c = 0; c < eq.cols; ++c) eq.at(r, c) = cplx(0.3 * ((r + c) % 5 - 2), 0.2 * (c % 3));
    CsiVector csi;
    csi.h.assign(static_cast<size_t>(cfg.n_used), cplx(1.0, 0.0));

    int64_t counted = 0;
    infer_llr(dm, eq, csi, 0.1, cfg, 30.0, &counted);
    REQUIRE(counted == demapper_mults_per_packet(dm, cfg));
    REQUIRE(counted == 495'360);
  }

  SECTION("decoder, both conventions, on a short sequence") {
    const int64_t n_soft = 256;
    LlrVector llrs(static_cast<size_t>(n_soft));
    for (size_t i = 0; i < llrs.size(); ++i) llrs[i] = ((int(i) % 7) - 3) * 0.8;

    DecoderModel<float> scalar(/*paired_input=*/false);
    scalar.init(13);
    int64_t counted = 0;
    infer_decode_batch(scalar, {&llrs}, &counted);
    int64_t expected = n_soft * gru_mults_per_step(scalar.trunk) +
                       (n_soft / 2) * mlp_mults_per_row(scalar.head);
    REQUIRE(counted == expected);
    REQUIRE(expected == n_soft * kGruStepScalar + (n_soft / 2) * kHeadRowMults);

    DecoderModel<float> paired(/*paired_input=*/true);
    paired.init(14);
    counted = 0;
    infer_decode_batch(paired, {&llrs}, &counted);
    expected = (n_soft / 2) * gru_mults_per_step(paired.trunk) +
               (n_soft / 2) * mlp_mults_per_row(paired.head);
    REQUIRE(counted == expected);

    // structured masks on the trunk must drop both counts identically
    auto& d00 = paired.trunk.dir(0, 0);
    d00.mask_ih.assign(static_cast<size_t>(d00.w_ih.numel()), 0);
    for (size_t i = 0; i < 300; ++i) d00.mask_ih[i] = 1;
    auto& d11 = paired.trunk.dir(1, 1);
    d11.mask_hh.assign(static_cast<size_t>(d11.w_hh.numel()), 1);
    for (size_t i = 0; i < d11.mask_hh.size(); ++i)
      if (i % 4 != 0) d11.mask_hh[i] = 0;
    const int64_t step_masked = kGruStepPaired - d00.w_ih.numel() + 300 -
                                d11.w_hh.numel() + d11.w_hh.numel() / 4;
    REQUIRE(gru_mults_per_step(paired.trunk) == step_masked);
    counted = 0;
    infer_decode_batch(paired, {&llrs}, &counted);
    REQUIRE(counted ==
            (n_soft / 2) * step_masked + (n_soft / 2) * mlp_mults_per_row(paired.head));
  }

  SECTION("batching multiplies the count by the batch size") {
    const int64_t n_soft = 64;
    LlrVector a(static_cast<size_t>(n_soft), 1.0), b(static_cast<size_t>(n_soft), -1.0);
    DecoderModel<float> m(/*paired_input=*/true);
    m.init(15);
    int64_t one = 0, two = 0;
    infer_decode_batch(m, {&a}, &one);
    infer_decode_batch(m, {&a, &b}, &two);
    REQUIRE(two == 2 * one);
  }
}

TEST_CASE("unknown layer kinds are rejected") {
  struct BogusLayer final : Layer<float> {
    RMat<float> forward(const RMat<float>& x, bool, std::mt19937_64*) override { return x; }
    RMat<float> backward(const RMat<float>& dy) override { return dy; }
    LayerSpec spec() const override {
      LayerSpec s;
      s.kind = LayerKind::gru;
      return s;
    }
  };
  Mlp<float> m;
  m.layers().push_back(std::make_unique<BogusLayer>());
  REQUIRE_THROWS_AS(mlp_mults_per_row(m), std::invalid_argument);
}

TEST_CASE("comparison report reproduces the reference ratios") {
  const FlopsReport rep = flops_comparison_report();

  REQUIRE(rep.lltf_samples == 160);
  REQUIRE(rep.data_symbols == 4128);
  REQUIRE(rep.soft_bits == 16512);

  REQUIRE(rep.chanest_classical == 4'360);
  REQUIRE(rep.chanest_nn == 452'608);
  REQUIRE(rep.chanest_nn_compressed == 220'646);
  REQUIRE(within_rel(double(rep.chanest_nn_compressed), 2.2e5, 0.02));

  REQUIRE(rep.demapper_classical == 1'353'984);
  REQUIRE(rep.demapper_nn == 495'360);
  REQUIRE(rep.demapper_nn_compressed == rep.demapper_nn);

  REQUIRE(rep.decoder_classical == 560'000'000);
  REQUIRE(rep.decoder_classical_measured.total() == 3'168'378);
  REQUIRE(rep.decoder_nn == 91'085'211'648);
  REQUIRE(rep.decoder_nn_compressed == 44'404'040'678);
  REQUIRE(within_rel(double(rep.decoder_nn_compressed), 4.45e10, 0.02));

  REQUIRE(rep.total_classical == 4'360 + 1'353'984 + 560'000'000);
  REQUIRE(within_rel(double(rep.total_classical), 5.61e8, 0.02));
  REQUIRE(rep.total_nn_compressed ==
          rep.chanest_nn_compressed + rep.demapper_nn_compressed + rep.decoder_nn_compressed);
  REQUIRE(within_rel(double(rep.total_nn_compressed), 4.45e10, 0.02));

  REQUIRE(within_rel(rep.ratio_chanest, 50.0, 0.10));
  REQUIRE(within_rel(rep.ratio_demapper, 0.37, 0.10));
  REQUIRE(within_rel(rep.ratio_decoder, 79.0, 0.10));
  REQUIRE(within_rel(rep.ratio_total, 79.0, 0.10));

  // compression invariants: compressed = uncompressed x kept fraction
  // (rounded to whole multiplies), which halves the pruned blocks and
  // leaves the quantize-only demapper unchanged
  REQUIRE(std::abs(double(rep.chanest_nn_compressed) - 0.4875 * double(rep.chanest_nn)) <= 1.0);
  REQUIRE(std::abs(double(rep.decoder_nn_compressed) - 0.4875 * double(rep.decoder_nn)) <= 2.0);
  REQUIRE(rep.chanest_nn_compressed <= rep.chanest_nn / 2);
  REQUIRE(rep.chanest_nn_compressed >= int64_t(0.45 * double(rep.chanest_nn)));
  REQUIRE(rep.decoder_nn_compressed <= rep.decoder_nn / 2);
  REQUIRE(rep.decoder_nn_compressed >= int64_t(0.45 * double(rep.decoder_nn)));
  REQUIRE(rep.chanest_kept == Catch::Approx(0.4875).margin(1e-5));
  REQUIRE(rep.decoder_kept == Catch::Approx(0.4875).margin(1e-5));

  const std::string json = rep.to_json();
  REQUIRE(json.find("\"nn_compressed_flops\": 220646") != std::string::npos);
  REQUIRE(json.find("\"convention\": \"mac2\"") != std::string::npos);
  REQUIRE(json.find("\"convention\": \"mults_only\"") != std::string::npos);
  REQUIRE(json.find("\"classical_flops\": 560000000") != std::string::npos);

  const std::string text = rep.to_text();
  REQUIRE(text.find("channel estimator") != std::string::npos);
  REQUIRE(text.find("mults_only") != std::string::npos);
  REQUIRE(text.find("mac2") != std::string::npos);
  REQUIRE(text.find("nn/classical") != std::string::npos);
  REQUIRE(text.find("91,085,211,648") != std::string::npos);
}

TEST_CASE("report accepts measured multiply counts") {
  FlopsReportOptions opt;
  opt.chanest_mults = 452'608;
  opt.chanest_mults_compressed = 219'000;
  opt.decoder_mults = 45'542'605'824;
  opt.decoder_mults_compressed = 22'000'000'000;
  opt.run_viterbi_probe = false;

  const FlopsReport rep = flops_comparison_report(opt);
  REQUIRE(rep.chanest_nn_compressed == 219'000);
  REQUIRE(rep.chanest_kept == Catch::Approx(219'000.0 / 452'608.0));
  REQUIRE(rep.decoder_nn == 2 * opt.decoder_mults);
  REQUIRE(rep.decoder_nn_compressed == 44'000'000'000);
  REQUIRE(rep.decoder_classical_measured.total() == 0);

  // overriding the per-soft-bit constant flows through to the classical row
  FlopsReportOptions alt;
  alt.classical.demapper_flops_per_soft_bit = 100.0;
  alt.run_viterbi_probe = false;
  REQUIRE(flops_comparison_report(alt).demapper_classical == 1'651'200);
}

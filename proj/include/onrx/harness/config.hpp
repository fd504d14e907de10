#pragma once

// Run configuration for the command-line workbench. A single JSON file
// describes everything a run needs: seeds, channel profile, SNR grid,
// packet counts, and the per-model training and compression settings.
// Unknown keys are rejected so a typo cannot silently fall back to a
// default. The ONRX_CONFIG environment variable names the default file.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "onrx/channel.hpp"
#include "onrx/common.hpp"
#include "onrx/harness/dataset.hpp"
#include "onrx/training.hpp"

namespace onrx {

inline constexpr char kConfigEnvVar[] = "ONRX_CONFIG";

// One model's compression recipe: block pruning with ADMM retraining
// phases, then mixed-scheme quantization with a straight-through finetune.
struct CompressSettings {
  double prune_rate = 2.0;  // 1.0 = keep the matrices dense
  int weight_bits = 8;
  double pow2_split = 0.5;
  int admm_iterations = 5;
  double admm_rho = 1e-3;
  int phase_epochs = 2;     // training epochs per ADMM round
  int finetune_epochs = 2;  // mask-respecting touch-up after hard pruning
  int ste_epochs = 2;       // quantized-forward finetune epochs
};

struct RunConfig {
  uint64_t master_seed = 1;
  uint32_t scrambler_seed = 0x5d;
  OfdmConfig phy;  // fixed 52-carrier geometry; kept here so the hash sees it
  ChannelProfile channel;
  std::vector<double> snr_grid_db = {2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24};
  int packets_per_snr = 1000;
  bool noiseless = false;      // overrides the grid with a single +inf point
  bool dataset_labels = true;  // store the transmitted bits in each record
  double llr_clamp = 30.0;
  int workers = 1;
  int decode_batch = 32;  // packets per decoder inference batch
  bool decoder_paired = true;

  TrainConfig train_channel;
  TrainConfig train_demapper;
  TrainConfig train_decoder;

  CompressSettings comp_channel{2.0, 8};
  CompressSettings comp_demapper{1.0, 4};
  CompressSettings comp_decoder{2.0, 8};

  std::vector<double> effective_snr_grid() const {
    if (noiseless) return {std::numeric_limits<double>::infinity()};
    return snr_grid_db;
  }

  void validate() const {
    if ((scrambler_seed & 0x7fu) == 0) throw DataError("scrambler_seed must be nonzero mod 128");
    if (scrambler_seed > 0x7fu) throw DataError("scrambler_seed must fit in 7 bits");
    try {
      phy.validate();
      channel.validate();
    } catch (const std::exception& e) {
      throw DataError(std::string("bad config: ") + e.what());
    }
    if (snr_grid_db.empty() && !noiseless) throw DataError("snr_grid_db must not be empty");
    if (packets_per_snr < 1) throw DataError("packets_per_snr must be positive");
    if (!(llr_clamp > 0)) throw DataError("llr_clamp must be positive");
    if (workers < 1 || workers > 256) throw DataError("workers must be in [1, 256]");
    if (decode_batch < 1) throw DataError("decode_batch must be positive");
    for (const TrainConfig* tc : {&train_channel, &train_demapper, &train_decoder}) {
      if (!(tc->lr > 0)) throw DataError("training lr must be positive");
      if (tc->batch < 1 || tc->max_epochs < 1 || tc->patience < 1)
        throw DataError("training batch, epochs, and patience must be positive");
      if (!(tc->val_frac > 0 && tc->val_frac < 1))
        throw DataError("training val_frac must be in (0, 1)");
      if (tc->bptt_window < 1 || tc->bptt_margin < 0 || tc->bptt_batch < 1 ||
          tc->batches_per_epoch < 1)
        throw DataError("training window settings must be positive");
      if (tc->max_minutes < 0) throw DataError("training max_minutes must be non-negative");
    }
    for (const CompressSettings* cs : {&comp_channel, &comp_demapper, &comp_decoder}) {
      if (!(cs->prune_rate >= 1.0)) throw DataError("prune_rate must be at least 1");
      if (cs->weight_bits != 4 && cs->weight_bits != 8)
        throw DataError("weight_bits must be 4 or 8");
      if (!(cs->pow2_split >= 0.0 && cs->pow2_split <= 1.0))
        throw DataError("pow2_split must be in [0, 1]");
      if (cs->admm_iterations < 0 || !(cs->admm_rho > 0))
        throw DataError("admm settings must be positive");
      if (cs->phase_epochs < 0 || cs->finetune_epochs < 0 || cs->ste_epochs < 0)
        throw DataError("compression epoch counts must be non-negative");
    }
  }
};

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw DataError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw DataError("unknown config key '" + it.key() + "' in " + where);
  }
}

template <class T>
void fetch(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_train(const nlohmann::json& j, const std::string& where, TrainConfig& tc) {
  require_keys(j,
               {"lr", "batch", "max_epochs", "patience", "val_frac", "seed", "log_path",
                "bptt_window", "bptt_margin", "bptt_batch", "batches_per_epoch", "max_minutes"},
               where);
  fetch(j, "lr", tc.lr);
  fetch(j, "batch", tc.batch);
  fetch(j, "max_epochs", tc.max_epochs);
  fetch(j, "patience", tc.patience);
  fetch(j, "val_frac", tc.val_frac);
  fetch(j, "seed", tc.seed);
  fetch(j, "log_path", tc.log_path);
  fetch(j, "bptt_window", tc.bptt_window);
  fetch(j, "bptt_margin", tc.bptt_margin);
  fetch(j, "bptt_batch", tc.bptt_batch);
  fetch(j, "batches_per_epoch", tc.batches_per_epoch);
  fetch(j, "max_minutes", tc.max_minutes);
}

inline void parse_compress(const nlohmann::json& j, const std::string& where,
                           CompressSettings& cs) {
  require_keys(j,
               {"prune_rate", "weight_bits", "pow2_split", "admm_iterations", "admm_rho",
                "phase_epochs", "finetune_epochs", "ste_epochs"},
               where);
  fetch(j, "prune_rate", cs.prune_rate);
  fetch(j, "weight_bits", cs.weight_bits);
  fetch(j, "pow2_split", cs.pow2_split);
  fetch(j, "admm_iterations", cs.admm_iterations);
  fetch(j, "admm_rho", cs.admm_rho);
  fetch(j, "phase_epochs", cs.phase_epochs);
  fetch(j, "finetune_epochs", cs.finetune_epochs);
  fetch(j, "ste_epochs", cs.ste_epochs);
}

}  // namespace detail

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file: " + path);
  nlohmann::json j;
  RunConfig rc;
  try {
    j = nlohmann::json::parse(f);
    detail::require_keys(j,
                         {"master_seed", "scrambler_seed", "channel", "snr_grid_db",
                          "packets_per_snr", "noiseless", "dataset_labels", "llr_clamp",
                          "workers", "decode_batch", "decoder_paired", "train", "compress"},
                         "config");
    detail::fetch(j, "master_seed", rc.master_seed);
    detail::fetch(j, "scrambler_seed", rc.scrambler_seed);
    if (j.contains("channel")) {
      const auto& jc = j.at("channel");
      detail::require_keys(jc, {"n_taps", "last_tap_decay_db"}, "channel");
      detail::fetch(jc, "n_taps", rc.channel.n_taps);
      detail::fetch(jc, "last_tap_decay_db", rc.channel.last_tap_decay_db);
    }
    detail::fetch(j, "snr_grid_db", rc.snr_grid_db);
    detail::fetch(j, "packets_per_snr", rc.packets_per_snr);
    detail::fetch(j, "noiseless", rc.noiseless);
    detail::fetch(j, "dataset_labels", rc.dataset_labels);
    detail::fetch(j, "llr_clamp", rc.llr_clamp);
    detail::fetch(j, "workers", rc.workers);
    detail::fetch(j, "decode_batch", rc.decode_batch);
    detail::fetch(j, "decoder_paired", rc.decoder_paired);
    if (j.contains("train")) {
      const auto& jt = j.at("train");
      detail::require_keys(jt, {"channel", "demapper", "decoder"}, "train");
      if (jt.contains("channel")) detail::parse_train(jt.at("channel"), "train.channel", rc.train_channel);
      if (jt.contains("demapper")) detail::parse_train(jt.at("demapper"), "train.demapper", rc.train_demapper);
      if (jt.contains("decoder")) detail::parse_train(jt.at("decoder"), "train.decoder", rc.train_decoder);
    }
    if (j.contains("compress")) {
      const auto& jq = j.at("compress");
      detail::require_keys(jq, {"channel", "demapper", "decoder"}, "compress");
      if (jq.contains("channel")) detail::parse_compress(jq.at("channel"), "compress.channel", rc.comp_channel);
      if (jq.contains("demapper")) detail::parse_compress(jq.at("demapper"), "compress.demapper", rc.comp_demapper);
      if (jq.contains("decoder")) detail::parse_compress(jq.at("decoder"), "compress.decoder", rc.comp_decoder);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config parse error in " + path + ": " + e.what());
  }
  rc.validate();
  return rc;
}

// Resolves the config in CLI priority order: explicit path, then the
// environment variable, then built-in defaults.
inline RunConfig load_run_config_or_default(const std::string& path) {
  if (!path.empty()) return load_run_config(path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_run_config(env);
  RunConfig rc;
  rc.validate();
  return rc;
}

// Fingerprint of every setting that shapes dataset contents. Stored in the
// dataset header at generation time and checked by consumers, so a file
// cannot be silently evaluated against the wrong configuration. Training
// and compression settings are deliberately excluded.
inline uint64_t generation_hash(const RunConfig& rc) {
  char buf[64];
  std::string s = "gen1";
  auto add_u = [&](uint64_t v) {
    std::snprintf(buf, sizeof buf, "|%" PRIu64, v);
    s += buf;
  };
  auto add_d = [&](double v) {
    std::snprintf(buf, sizeof buf, "|%.17g", v);
    s += buf;
  };
  add_u(rc.master_seed);
  add_u(rc.scrambler_seed);
  for (int v : {rc.phy.nfft, rc.phy.n_used, rc.phy.n_data, rc.phy.n_pilot, rc.phy.cp_len,
                rc.phy.n_ofdm_symbols, rc.phy.bits_per_symbol, rc.phy.coding_rate_num,
                rc.phy.coding_rate_den})
    add_u(static_cast<uint64_t>(v));
  add_u(static_cast<uint64_t>(rc.channel.n_taps));
  add_d(rc.channel.last_tap_decay_db);
  for (double snr : rc.effective_snr_grid()) add_d(snr);
  add_u(static_cast<uint64_t>(rc.packets_per_snr));
  add_u(rc.dataset_labels ? 1 : 0);

  uint64_t h = 14695981039346656037ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace onrx

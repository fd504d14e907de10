#pragma once

// ONRXDAT1 packet dataset file: a fixed header followed by one record per
// packet. All integers and floats are little-endian; floats are IEEE-754
// binary32 (the SNR of a noiseless packet is +inf, which binary32 carries).
//
//   header: magic "ONRXDAT1" | u16 version | u16 flags | u64 config_hash
//           | u32 packet_count | u16 n_snr | f32 snr_grid[n_snr]
//   record: u64 seed | f32 snr_db | u16 n_taps | f32 taps[2*n_taps]
//           | u32 n_info_bits | u8 packed_bits[ceil(n/8)]   (labels flag)
//           | u32 n_iq | f32 iq[2*n_iq]
//
// flags bit 0: records carry the transmitted payload bits. Datasets written
// without it (an over-the-air capture would be one) still support evaluation
// of nothing and training of the channel estimator only; anything needing
// transmit-side ground truth refuses them.
//
// Info bits are packed LSB-first; pad bits in the last byte are zero.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "onrx/common.hpp"

namespace onrx {

// Malformed or mismatched input files; the CLI maps this to its data-error
// exit code, distinct from usage errors and training divergence.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr char kDatasetMagic[9] = "ONRXDAT1";
inline constexpr uint16_t kDatasetVersion = 1;
inline constexpr uint16_t kDatasetFlagLabels = 1;

struct DatasetHeader {
  uint16_t version = kDatasetVersion;
  uint16_t flags = kDatasetFlagLabels;
  uint64_t config_hash = 0;
  uint32_t n_packets = 0;
  std::vector<float> snr_grid;

  bool has_labels() const { return (flags & kDatasetFlagLabels) != 0; }
};

struct PacketRecord {
  uint64_t seed = 0;
  float snr_db = 0.0f;
  CplxVec taps;       // channel realization, stored as f32 pairs
  BitVec info_bits;   // transmitted data bits; empty in label-less datasets
  CplxVec iq;         // received frame, stored as f32 pairs
};

namespace detail {

inline void put_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <class T>
void put_pod(std::ofstream& f, T v) {
  put_bytes(f, &v, sizeof v);
}

inline void get_bytes(std::ifstream& f, void* p, size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(f.gcount()) != n) throw DataError("truncated dataset file");
}
template <class T>
T get_pod(std::ifstream& f) {
  T v;
  get_bytes(f, &v, sizeof v);
  return v;
}

inline std::vector<uint8_t> pack_bits(const BitVec& bits) {
  std::vector<uint8_t> out((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  return out;
}

inline BitVec unpack_bits(const std::vector<uint8_t>& bytes, size_t n_bits) {
  BitVec out(n_bits);
  for (size_t i = 0; i < n_bits; ++i) out[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  return out;
}

}  // namespace detail

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, const DatasetHeader& header)
      : header_(header), f_(path, std::ios::binary | std::ios::trunc) {
    if (!f_) throw DataError("cannot open dataset for writing: " + path);
    if (header_.snr_grid.empty()) throw DataError("dataset needs a non-empty SNR grid");
    detail::put_bytes(f_, kDatasetMagic, 8);
    detail::put_pod(f_, header_.version);
    detail::put_pod(f_, header_.flags);
    detail::put_pod(f_, header_.config_hash);
    detail::put_pod(f_, header_.n_packets);
    detail::put_pod(f_, static_cast<uint16_t>(header_.snr_grid.size()));
    for (float s : header_.snr_grid) detail::put_pod(f_, s);
  }

  void write(const PacketRecord& rec) {
    if (written_ >= header_.n_packets) throw DataError("more records than the header declares");
    if (rec.taps.empty() || rec.taps.size() > 0xffff) throw DataError("bad tap count");
    if (rec.iq.empty()) throw DataError("empty IQ record");
    const bool want_bits = header_.has_labels();
    if (want_bits == rec.info_bits.empty())
      throw DataError("record labels do not match the dataset flags");

    detail::put_pod(f_, rec.seed);
    detail::put_pod(f_, rec.snr_db);
    detail::put_pod(f_, static_cast<uint16_t>(rec.taps.size()));
    for (const cplx& t : rec.taps) {
      detail::put_pod(f_, static_cast<float>(t.real()));
      detail::put_pod(f_, static_cast<float>(t.imag()));
    }
    detail::put_pod(f_, static_cast<uint32_t>(rec.info_bits.size()));
    if (!rec.info_bits.empty()) {
      const auto packed = detail::pack_bits(rec.info_bits);
      detail::put_bytes(f_, packed.data(), packed.size());
    }
    detail::put_pod(f_, static_cast<uint32_t>(rec.iq.size()));
    for (const cplx& v : rec.iq) {
      detail::put_pod(f_, static_cast<float>(v.real()));
      detail::put_pod(f_, static_cast<float>(v.imag()));
    }
    ++written_;
  }

  // Must be called once after the last record; verifies the declared count.
  void finish() {
    if (written_ != header_.n_packets)
      throw DataError("record count does not match the dataset header");
    f_.flush();
    if (!f_) throw DataError("dataset write failed");
    f_.close();
  }

 private:
  DatasetHeader header_;
  std::ofstream f_;
  uint32_t written_ = 0;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path)
      : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw DataError("cannot open dataset: " + path);
    char magic[8];
    detail::get_bytes(f_, magic, 8);
    if (std::memcmp(magic, kDatasetMagic, 8) != 0)
      throw DataError("not an ONRXDAT1 dataset: " + path);
    header_.version = detail::get_pod<uint16_t>(f_);
    if (header_.version != kDatasetVersion) throw DataError("unsupported dataset version");
    header_.flags = detail::get_pod<uint16_t>(f_);
    header_.config_hash = detail::get_pod<uint64_t>(f_);
    header_.n_packets = detail::get_pod<uint32_t>(f_);
    const uint16_t n_snr = detail::get_pod<uint16_t>(f_);
    if (n_snr == 0) throw DataError("dataset has an empty SNR grid");
    header_.snr_grid.resize(n_snr);
    for (auto& s : header_.snr_grid) s = detail::get_pod<float>(f_);
    body_off_ = f_.tellg();
  }

  const DatasetHeader& header() const { return header_; }
  const std::string& path() const { return path_; }
  uint32_t records_read() const { return read_; }

  // Reads the next record. Returns false once the declared count has been
  // consumed, after verifying the file ends exactly there.
  bool next(PacketRecord& rec) {
    if (read_ >= header_.n_packets) {
      if (!eof_checked_) {
        f_.peek();
        if (!f_.eof()) throw DataError("trailing bytes after the last dataset record");
        eof_checked_ = true;
      }
      return false;
    }
    rec.seed = detail::get_pod<uint64_t>(f_);
    rec.snr_db = detail::get_pod<float>(f_);
    const uint16_t n_taps = detail::get_pod<uint16_t>(f_);
    if (n_taps == 0 || n_taps > 64) throw DataError("implausible tap count in record");
    rec.taps.resize(n_taps);
    for (auto& t : rec.taps) {
      const float re = detail::get_pod<float>(f_);
      const float im = detail::get_pod<float>(f_);
      t = cplx(re, im);
    }
    const uint32_t n_bits = detail::get_pod<uint32_t>(f_);
    if ((n_bits != 0) != header_.has_labels())
      throw DataError("record labels do not match the dataset flags");
    if (n_bits > (1u << 20)) throw DataError("implausible label size in record");
    if (n_bits != 0) {
      std::vector<uint8_t> packed((n_bits + 7) / 8);
      detail::get_bytes(f_, packed.data(), packed.size());
      rec.info_bits = detail::unpack_bits(packed, n_bits);
    } else {
      rec.info_bits.clear();
    }
    const uint32_t n_iq = detail::get_pod<uint32_t>(f_);
    if (n_iq == 0 || n_iq > (1u << 24)) throw DataError("implausible IQ size in record");
    rec.iq.resize(n_iq);
    for (auto& v : rec.iq) {
      const float re = detail::get_pod<float>(f_);
      const float im = detail::get_pod<float>(f_);
      v = cplx(re, im);
    }
    ++read_;
    return true;
  }

  void rewind() {
    f_.clear();
    f_.seekg(body_off_);
    read_ = 0;
    eof_checked_ = false;
  }

 private:
  std::string path_;
  std::ifstream f_;
  DatasetHeader header_;
  std::streampos body_off_;
  uint32_t read_ = 0;
  bool eof_checked_ = false;
};

}  // namespace onrx

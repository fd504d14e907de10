#pragma once

// The three receiver networks: structure, initialization, and file I/O.
// Inference adapters that splice them into the receiver chain live in
// rx_nn.hpp; training procedures live in training.hpp.

#include <string>

#include "onrx/nn/serialize.hpp"

namespace onrx {

// Uniform view over a model's parameters and their quantization metadata,
// used by the compression pass. Entries are parallel.
template <class S>
struct ModelParams {
  std::vector<ParamRef<S>> params;
  std::vector<TensorQuant*> quant;
};

namespace detail {
template <class S>
void append_unit(ModelParams<S>& out, std::vector<ParamRef<S>> params,
                 std::vector<TensorQuant>& quant) {
  quant.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    out.params.push_back(params[i]);
    out.quant.push_back(&quant[i]);
  }
}
}  // namespace detail

// Channel estimator: two independent real-valued MLPs, one for the real and
// one for the imaginary part of the 52 CSI coefficients, each fed the full
// 160-sample time-domain preamble of that component.
template <class S>
struct ChanestModel {
  static constexpr int64_t kIn = 160;
  static constexpr int64_t kHidden1 = 512;
  static constexpr int64_t kHidden2 = 256;
  static constexpr int64_t kOut = 52;
  static constexpr float kDropout = 0.15f;

  Mlp<S> real, imag;
  std::vector<TensorQuant> quant_real, quant_imag;

  ChanestModel() {
    build(real);
    build(imag);
    quant_real.resize(real.params().size());
    quant_imag.resize(imag.params().size());
  }

  static void build(Mlp<S>& m) {
    m.layers().push_back(std::make_unique<LinearLayer<S>>(kIn, kHidden1));
    m.layers().push_back(std::make_unique<ReluLayer<S>>());
    m.layers().push_back(std::make_unique<DropoutLayer<S>>(kDropout));
    m.layers().push_back(std::make_unique<LinearLayer<S>>(kHidden1, kHidden2));
    m.layers().push_back(std::make_unique<ReluLayer<S>>());
    m.layers().push_back(std::make_unique<LinearLayer<S>>(kHidden2, kOut));
  }

  void init(uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto* mlp : {&real, &imag})
      for (auto& l : mlp->layers())
        if (auto* lin = dynamic_cast<LinearLayer<S>*>(l.get())) lin->init(rng);
  }

  int64_t param_count() { return real.param_count() + imag.param_count(); }

  ModelParams<S> all_params() {
    ModelParams<S> out;
    detail::append_unit(out, real.params(), quant_real);
    detail::append_unit(out, imag.params(), quant_imag);
    return out;
  }

  template <class T>
  ChanestModel<T> cast() {
    ChanestModel<T> out;
    copy_params(all_params(), out.all_params());
    return out;
  }
};

// Soft demapper: one equalized symbol (I, Q) in, four bit probabilities out.
template <class S>
struct DemapperModel {
  static constexpr int64_t kIn = 2;
  static constexpr int64_t kHidden = 20;
  static constexpr int64_t kOut = 4;

  Mlp<S> net;
  std::vector<TensorQuant> quant;

  DemapperModel() {
    net.layers().push_back(std::make_unique<LinearLayer<S>>(kIn, kHidden));
    net.layers().push_back(std::make_unique<ReluLayer<S>>());
    net.layers().push_back(std::make_unique<LinearLayer<S>>(kHidden, kOut));
    net.layers().push_back(std::make_unique<SigmoidLayer<S>>());
    quant.resize(net.params().size());
  }

  void init(uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : net.layers())
      if (auto* lin = dynamic_cast<LinearLayer<S>*>(l.get())) lin->init(rng);
  }

  int64_t param_count() { return net.param_count(); }

  ModelParams<S> all_params() {
    ModelParams<S> out;
    detail::append_unit(out, net.params(), quant);
    return out;
  }

  template <class T>
  DemapperModel<T> cast() {
    DemapperModel<T> out;
    copy_params(all_params(), out.all_params());
    return out;
  }
};

// Decoder: 3-layer bidirectional GRU trunk plus a per-timestep dense head.
// Two input conventions are supported:
//   paired (default): one timestep per information bit, input = the two
//     soft-bit probabilities of that bit's code-bit pair (T = 8256, in = 2).
//   scalar: one timestep per code bit (T = 16512, in = 1); the head runs on
//     every second timestep (stride 2) to emit 8256 outputs.
template <class S>
struct DecoderModel {
  static constexpr int64_t kHidden = 256;
  static constexpr int64_t kLayers = 3;
  static constexpr int64_t kHeadHidden = 16;

  BiGru<S> trunk;
  Mlp<S> head;
  bool paired;
  std::vector<TensorQuant> quant_trunk, quant_head;

  explicit DecoderModel(bool paired_input = true)
      : trunk(paired_input ? 2 : 1, kHidden, kLayers, true), paired(paired_input) {
    head.layers().push_back(std::make_unique<LinearLayer<S>>(2 * kHidden, kHeadHidden));
    head.layers().push_back(std::make_unique<ReluLayer<S>>());
    head.layers().push_back(std::make_unique<LinearLayer<S>>(kHeadHidden, 1));
    head.layers().push_back(std::make_unique<SigmoidLayer<S>>());
    quant_trunk.resize(trunk.params().size());
    quant_head.resize(head.params().size());
  }

  void init(uint64_t seed) {
    std::mt19937_64 rng(seed);
    trunk.init(rng);
    for (auto& l : head.layers())
      if (auto* lin = dynamic_cast<LinearLayer<S>*>(l.get())) lin->init(rng);
  }

  int64_t param_count() { return trunk.param_count() + head.param_count(); }

  ModelParams<S> all_params() {
    ModelParams<S> out;
    detail::append_unit(out, trunk.params(), quant_trunk);
    detail::append_unit(out, head.params(), quant_head);
    return out;
  }

  template <class T>
  DecoderModel<T> cast() {
    DecoderModel<T> out(paired);
    copy_params(all_params(), out.all_params());
    return out;
  }
};

// Copies values and masks between two models of identical structure but
// possibly different scalar types. Quantization metadata is copied verbatim.
template <class A, class B>
void copy_params(ModelParams<A> src, ModelParams<B> dst) {
  if (src.params.size() != dst.params.size())
    throw std::invalid_argument("model structure mismatch in copy_params");
  for (size_t i = 0; i < src.params.size(); ++i) {
    auto& s = src.params[i];
    auto& d = dst.params[i];
    if (s.value->shape != d.value->shape)
      throw std::invalid_argument("model tensor shape mismatch in copy_params");
    for (size_t j = 0; j < s.value->data.size(); ++j)
      d.value->data[j] = static_cast<B>(s.value->data[j]);
    if (d.mask && s.mask) *d.mask = *s.mask;
    *dst.quant[i] = *src.quant[i];
  }
}

// ---- file I/O ---------------------------------------------------------------

template <class S>
void save_model(const std::string& path, ChanestModel<S>& m) {
  auto os = open_binary_out(path);
  ByteWriter w(os);
  write_model_header(w, ModelKind::chanest, 2);
  write_mlp_unit(w, "real", m.real, &m.quant_real);
  write_mlp_unit(w, "imag", m.imag, &m.quant_imag);
}

template <class S>
void save_model(const std::string& path, DemapperModel<S>& m) {
  auto os = open_binary_out(path);
  ByteWriter w(os);
  write_model_header(w, ModelKind::demapper, 1);
  write_mlp_unit(w, "net", m.net, &m.quant);
}

template <class S>
void save_model(const std::string& path, DecoderModel<S>& m) {
  auto os = open_binary_out(path);
  ByteWriter w(os);
  write_model_header(w, ModelKind::decoder, 2);
  write_gru_unit(w, m.paired ? "trunk2" : "trunk1", m.trunk, &m.quant_trunk);
  write_mlp_unit(w, "head", m.head, &m.quant_head);
}

template <class S>
ChanestModel<S> load_chanest(const std::string& path) {
  auto is = open_binary_in(path);
  ByteReader r(is);
  if (read_model_header(r, ModelKind::chanest) != 2)
    throw std::runtime_error("channel estimator file must hold two units");
  ChanestModel<S> m;
  read_mlp_unit(r, "real", m.real, &m.quant_real);
  read_mlp_unit(r, "imag", m.imag, &m.quant_imag);
  return m;
}

template <class S>
DemapperModel<S> load_demapper(const std::string& path) {
  auto is = open_binary_in(path);
  ByteReader r(is);
  if (read_model_header(r, ModelKind::demapper) != 1)
    throw std::runtime_error("demapper file must hold one unit");
  DemapperModel<S> m;
  read_mlp_unit(r, "net", m.net, &m.quant);
  return m;
}

template <class S>
DecoderModel<S> load_decoder(const std::string& path) {
  auto is = open_binary_in(path);
  ByteReader r(is);
  if (read_model_header(r, ModelKind::decoder) != 2)
    throw std::runtime_error("decoder file must hold two units");
  // peek the trunk name through a full unit read into a fresh model of the
  // right convention: the unit name encodes the input convention
  std::vector<TensorQuant> quant_trunk;
  BiGru<S> trunk = read_gru_unit<S>(r, "", &quant_trunk);
  const bool paired = trunk.input_size() == 2;
  if (!paired && trunk.input_size() != 1)
    throw std::runtime_error("decoder trunk has an unsupported input size");
  DecoderModel<S> m(paired);
  m.trunk = std::move(trunk);
  m.quant_trunk = std::move(quant_trunk);
  read_mlp_unit(r, "head", m.head, &m.quant_head);
  return m;
}

}  // namespace onrx

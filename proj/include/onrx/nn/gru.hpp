#pragma once

// Multi-layer bidirectional GRU with full backpropagation through time.
//
// Gate convention (order r, z, n in the stacked 3h dimension):
//   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh  (W_in x + b_in + r .* (W_hn h + b_hn))
//   h' = (1 - z) .* n + z .* h
// Separate input and hidden biases, so each layer/direction carries
// 3*(in*h + h*h + 2h) parameters.
//
// Sequences are stored time-major: a (T*B) x F row-major matrix whose rows
// [t*B, (t+1)*B) hold timestep t for every batch element.

#include "onrx/nn/layers.hpp"
#include "onrx/nn/tensor.hpp"

namespace onrx {

template <class S>
struct GruDirParams {
  Tensor<S> w_ih, w_hh, b_ih, b_hh;
  Tensor<S> gw_ih, gw_hh, gb_ih, gb_hh;
  std::vector<uint8_t> mask_ih, mask_hh;  // optional prune masks

  GruDirParams(int64_t in, int64_t h)
      : w_ih({3 * h, in}),
        w_hh({3 * h, h}),
        b_ih({3 * h}),
        b_hh({3 * h}),
        gw_ih({3 * h, in}),
        gw_hh({3 * h, h}),
        gb_ih({3 * h}),
        gb_hh({3 * h}) {}

  void init(std::mt19937_64& rng, int64_t in, int64_t h) {
    init_uniform_fanin(w_ih, in, rng);
    init_uniform_fanin(w_hh, h, rng);
    init_uniform_fanin(b_ih, h, rng);
    init_uniform_fanin(b_hh, h, rng);
  }
};

template <class S>
class BiGru {
 public:
  BiGru(int64_t input, int64_t hidden, int64_t n_layers, bool bidirectional = true)
      : in_(input), h_(hidden), nl_(n_layers), nd_(bidirectional ? 2 : 1) {
    for (int64_t l = 0; l < nl_; ++l)
      for (int64_t d = 0; d < nd_; ++d)
        dirs_.emplace_back(l == 0 ? in_ : h_ * nd_, h_);
  }

  void init(std::mt19937_64& rng) {
    for (int64_t l = 0; l < nl_; ++l)
      for (int64_t d = 0; d < nd_; ++d) dirs_[l * nd_ + d].init(rng, l == 0 ? in_ : h_ * nd_, h_);
  }

  int64_t input_size() const { return in_; }
  int64_t hidden_size() const { return h_; }
  int64_t n_layers() const { return nl_; }
  int64_t n_directions() const { return nd_; }
  int64_t output_size() const { return h_ * nd_; }
  GruDirParams<S>& dir(int64_t layer, int64_t d) { return dirs_[layer * nd_ + d]; }
  const GruDirParams<S>& dir(int64_t layer, int64_t d) const { return dirs_[layer * nd_ + d]; }

  // Training forward: caches activations for backward().
  RMat<S> forward(const RMat<S>& x, int64_t T, int64_t B) {
    check_seq(x, T, B, in_);
    T_ = T;
    B_ = B;
    caches_.assign(dirs_.size(), DirCache{});
    layer_in_.assign(nl_, RMat<S>());
    RMat<S> cur = x;
    for (int64_t l = 0; l < nl_; ++l) {
      layer_in_[l] = cur;
      RMat<S> out(T * B, h_ * nd_);
      for (int64_t d = 0; d < nd_; ++d)
        run_dir(dirs_[l * nd_ + d], caches_[l * nd_ + d], layer_in_[l], out, d, true, T, B);
      cur = std::move(out);
    }
    return cur;
  }

  // Inference forward: no caches kept beyond the per-layer output. When a
  // counter is supplied, every matrix product adds the weight multiplies it
  // performs (prune-masked weights excluded).
  RMat<S> infer(const RMat<S>& x, int64_t T, int64_t B, int64_t* mult_counter = nullptr) const {
    check_seq(x, T, B, in_);
    RMat<S> cur = x;
    DirCache scratch;
    for (int64_t l = 0; l < nl_; ++l) {
      RMat<S> out(T * B, h_ * nd_);
      for (int64_t d = 0; d < nd_; ++d)
        run_dir(dirs_[l * nd_ + d], scratch, cur, out, d, false, T, B, mult_counter);
      cur = std::move(out);
    }
    return cur;
  }

  // Backward through all layers; dy has the shape of forward()'s output.
  // Returns the gradient with respect to the input sequence.
  RMat<S> backward(const RMat<S>& dy) {
    RMat<S> cur = dy;
    for (int64_t l = nl_ - 1; l >= 0; --l) {
      RMat<S> dx = RMat<S>::Zero(T_ * B_, l == 0 ? in_ : h_ * nd_);
      for (int64_t d = 0; d < nd_; ++d)
        back_dir(dirs_[l * nd_ + d], caches_[l * nd_ + d], layer_in_[l], cur, dx, d);
      cur = std::move(dx);
    }
    return cur;
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    for (auto& p : dirs_) {
      out.push_back({&p.w_ih, &p.gw_ih, &p.mask_ih, "gru.w_ih"});
      out.push_back({&p.w_hh, &p.gw_hh, &p.mask_hh, "gru.w_hh"});
      out.push_back({&p.b_ih, &p.gb_ih, nullptr, "gru.b_ih"});
      out.push_back({&p.b_hh, &p.gb_hh, nullptr, "gru.b_hh"});
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(S(0));
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : dirs_)
      n += p.w_ih.numel() + p.w_hh.numel() + p.b_ih.numel() + p.b_hh.numel();
    return n;
  }

  LayerSpec spec() const {
    LayerSpec s;
    s.kind = LayerKind::gru;
    s.in = in_;
    s.hidden = h_;
    s.layers = nl_;
    s.directions = nd_;
    return s;
  }

 private:
  struct DirCache {
    RMat<S> r, z, n, phn, h;  // (T*B) x h each; h holds post-step states
  };

  static void check_seq(const RMat<S>& x, int64_t T, int64_t B, int64_t f) {
    if (x.rows() != T * B || x.cols() != f) throw std::invalid_argument("bad sequence shape");
  }

  // Map timestep t of the direction to a row block: forward direction walks
  // 0..T-1, backward direction walks T-1..0.
  static int64_t step_row(int64_t t, int64_t d, int64_t T, int64_t B) {
    return (d == 0 ? t : T - 1 - t) * B;
  }

  void run_dir(const GruDirParams<S>& p, DirCache& c, const RMat<S>& x, RMat<S>& out, int64_t d,
               bool keep_cache, int64_t T, int64_t B, int64_t* mult_counter = nullptr) const {
    const int64_t h = h_;
    const int64_t live_hh =
        mult_counter ? live_count(p.w_hh.numel(), p.mask_hh) : 0;
    // input contribution for every step in one GEMM
    RMat<S> pre_ih = x * p.w_ih.mat().transpose();
    if (mult_counter) *mult_counter += x.rows() * live_count(p.w_ih.numel(), p.mask_ih);
    pre_ih.rowwise() += Eigen::Map<const RVec<S>>(p.b_ih.data.data(), 3 * h);

    if (keep_cache) {
      c.r.resize(T * B, h);
      c.z.resize(T * B, h);
      c.n.resize(T * B, h);
      c.phn.resize(T * B, h);
      c.h.resize(T * B, h);
    }
    RMat<S> hprev = RMat<S>::Zero(B, h);
    RMat<S> ph(B, 3 * h);
    for (int64_t step = 0; step < T; ++step) {
      const int64_t row = step_row(step, d, T, B);
      ph.noalias() = hprev * p.w_hh.mat().transpose();
      if (mult_counter) *mult_counter += B * live_hh;
      ph.rowwise() += Eigen::Map<const RVec<S>>(p.b_hh.data.data(), 3 * h);
      auto a = pre_ih.middleRows(row, B);
      auto r = (S(1) / (S(1) + (-(a.leftCols(h) + ph.leftCols(h)).array()).exp())).eval();
      auto z =
          (S(1) / (S(1) + (-(a.middleCols(h, h) + ph.middleCols(h, h)).array()).exp())).eval();
      auto phn = ph.rightCols(h);
      auto n = ((a.rightCols(h).array() + r * phn.array()).tanh()).eval();
      RMat<S> hnew = ((S(1) - z) * n + z * hprev.array()).matrix();
      if (keep_cache) {
        c.r.middleRows(row, B) = r.matrix();
        c.z.middleRows(row, B) = z.matrix();
        c.n.middleRows(row, B) = n.matrix();
        c.phn.middleRows(row, B) = phn;
        c.h.middleRows(row, B) = hnew;
      }
      out.block(row, d * h, B, h) = hnew;
      hprev = std::move(hnew);
    }
  }

  void back_dir(GruDirParams<S>& p, DirCache& c, const RMat<S>& x, const RMat<S>& dy, RMat<S>& dx,
                int64_t d) {
    const int64_t T = T_, B = B_, h = h_;
    RMat<S> da_all(T * B, 3 * h);  // input-side pre-activation grads, all steps
    RMat<S> dh = RMat<S>::Zero(B, h);
    RMat<S> dph(B, 3 * h);
    for (int64_t step = T - 1; step >= 0; --step) {
      const int64_t row = step_row(step, d, T, B);
      dh += dy.block(row, d * h, B, h);

      auto r = c.r.middleRows(row, B).array();
      auto z = c.z.middleRows(row, B).array();
      auto n = c.n.middleRows(row, B).array();
      auto phn = c.phn.middleRows(row, B).array();
      // previous hidden state: zero at the direction's first step
      RMat<S> hprev;
      if (step == 0) {
        hprev = RMat<S>::Zero(B, h);
      } else {
        hprev = c.h.middleRows(step_row(step - 1, d, T, B), B);
      }

      auto dha = dh.array();
      auto dz = (dha * (hprev.array() - n)).eval();
      auto dn = (dha * (S(1) - z)).eval();
      RMat<S> dh_carry = (dha * z).matrix();

      auto dnpre = (dn * (S(1) - n * n)).eval();
      auto dr = (dnpre * phn).eval();
      auto dphn = (dnpre * r).eval();
      auto drpre = (dr * r * (S(1) - r)).eval();
      auto dzpre = (dz * z * (S(1) - z)).eval();

      auto da = da_all.middleRows(row, B);
      da.leftCols(h) = drpre.matrix();
      da.middleCols(h, h) = dzpre.matrix();
      da.rightCols(h) = dnpre.matrix();

      dph.leftCols(h) = drpre.matrix();
      dph.middleCols(h, h) = dzpre.matrix();
      dph.rightCols(h) = dphn.matrix();

      p.gw_hh.mat().noalias() += dph.transpose() * hprev;
      Eigen::Map<RVec<S>>(p.gb_hh.data.data(), 3 * h) += dph.colwise().sum();
      dh = dph * p.w_hh.mat();
      dh += dh_carry;
    }
    p.gw_ih.mat().noalias() += da_all.transpose() * x;
    Eigen::Map<RVec<S>>(p.gb_ih.data.data(), 3 * h) += da_all.colwise().sum();
    dx.noalias() += da_all * p.w_ih.mat();
  }

  int64_t in_, h_, nl_, nd_;
  int64_t T_ = 0, B_ = 0;
  std::vector<GruDirParams<S>> dirs_;
  std::vector<DirCache> caches_;
  std::vector<RMat<S>> layer_in_;
};

}  // namespace onrx

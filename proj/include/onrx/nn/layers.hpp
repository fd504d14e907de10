#pragma once

// Feed-forward layers with explicit forward/backward passes. A model is a
// sequence of layers; each caches what its backward pass needs.

#include <memory>

#include "onrx/nn/tensor.hpp"

namespace onrx {

enum class LayerKind : uint8_t { linear = 0, relu = 1, sigmoid = 2, dropout = 3, gru = 4 };

struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  int64_t in = 0;
  int64_t out = 0;
  int64_t hidden = 0;
  int64_t layers = 0;
  int64_t directions = 1;
  float dropout_p = 0.0f;
};

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual RMat<S> forward(const RMat<S>& x, bool train, std::mt19937_64* rng) = 0;
  virtual RMat<S> backward(const RMat<S>& dy) = 0;
  virtual void collect_params(std::vector<ParamRef<S>>& out) {}
  virtual LayerSpec spec() const = 0;
};

template <class S>
class LinearLayer final : public Layer<S> {
 public:
  LinearLayer(int64_t in, int64_t out) : w_({out, in}), b_({out}), gw_({out, in}), gb_({out}) {}

  void init(std::mt19937_64& rng) {
    init_uniform_fanin(w_, w_.shape[1], rng);
    init_uniform_fanin(b_, w_.shape[1], rng);
  }

  RMat<S> forward(const RMat<S>& x, bool, std::mt19937_64*) override {
    x_ = x;
    RMat<S> y = x * w_.mat().transpose();
    y.rowwise() += Eigen::Map<const RVec<S>>(b_.data.data(), b_.numel());
    return y;
  }

  RMat<S> backward(const RMat<S>& dy) override {
    gw_.mat().noalias() += dy.transpose() * x_;
    Eigen::Map<RVec<S>>(gb_.data.data(), gb_.numel()) += dy.colwise().sum();
    return dy * w_.mat();
  }

  void collect_params(std::vector<ParamRef<S>>& out) override {
    out.push_back({&w_, &gw_, &mask_, "linear.w"});
    out.push_back({&b_, &gb_, nullptr, "linear.b"});
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::linear;
    s.in = w_.shape[1];
    s.out = w_.shape[0];
    return s;
  }

  Tensor<S>& weight() { return w_; }
  Tensor<S>& bias() { return b_; }
  std::vector<uint8_t>& mask() { return mask_; }
  const Tensor<S>& weight() const { return w_; }
  const Tensor<S>& bias() const { return b_; }
  const std::vector<uint8_t>& mask() const { return mask_; }

 private:
  Tensor<S> w_, b_, gw_, gb_;
  std::vector<uint8_t> mask_;  // optional prune mask, parallel to w_.data
  RMat<S> x_;
};

template <class S>
class ReluLayer final : public Layer<S> {
 public:
  RMat<S> forward(const RMat<S>& x, bool, std::mt19937_64*) override {
    y_ = x.cwiseMax(S(0));
    return y_;
  }
  RMat<S> backward(const RMat<S>& dy) override {
    return ((y_.array() > S(0)).template cast<S>() * dy.array()).matrix();
  }
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::relu;
    return s;
  }

 private:
  RMat<S> y_;
};

template <class S>
class SigmoidLayer final : public Layer<S> {
 public:
  RMat<S> forward(const RMat<S>& x, bool, std::mt19937_64*) override {
    y_ = (S(1) / (S(1) + (-x.array()).exp())).matrix();
    return y_;
  }
  RMat<S> backward(const RMat<S>& dy) override {
    return (dy.array() * y_.array() * (S(1) - y_.array())).matrix();
  }
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::sigmoid;
    return s;
  }

 private:
  RMat<S> y_;
};

// Inverted-scaling dropout: kept activations divided by (1-p) in train mode,
// identity in eval mode.
template <class S>
class DropoutLayer final : public Layer<S> {
 public:
  explicit DropoutLayer(float p) : p_(p) {
    if (p < 0.0f || p >= 1.0f) throw std::invalid_argument("dropout_p must be in [0,1)");
  }

  RMat<S> forward(const RMat<S>& x, bool train, std::mt19937_64* rng) override {
    if (!train || p_ == 0.0f) {
      mask_.resize(0, 0);
      return x;
    }
    if (!rng) throw std::invalid_argument("train-mode dropout needs an RNG");
    mask_.resize(x.rows(), x.cols());
    const S keep_inv = S(1) / S(1.0f - p_);
    for (Eigen::Index i = 0; i < mask_.rows(); ++i)
      for (Eigen::Index j = 0; j < mask_.cols(); ++j) {
        const double u = static_cast<double>((*rng)() >> 11) * (1.0 / 9007199254740992.0);
        mask_(i, j) = u < p_ ? S(0) : keep_inv;
      }
    return x.cwiseProduct(mask_);
  }

  RMat<S> backward(const RMat<S>& dy) override {
    if (mask_.size() == 0) return dy;
    return dy.cwiseProduct(mask_);
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.dropout_p = p_;
    return s;
  }

 private:
  float p_;
  RMat<S> mask_;
};

// Sequential feed-forward network.
template <class S>
class Mlp {
 public:
  std::vector<std::unique_ptr<Layer<S>>>& layers() { return layers_; }
  const std::vector<std::unique_ptr<Layer<S>>>& layers() const { return layers_; }

  RMat<S> forward(const RMat<S>& x, bool train = false, std::mt19937_64* rng = nullptr) {
    RMat<S> h = x;
    for (auto& l : layers_) h = l->forward(h, train, rng);
    return h;
  }

  RMat<S> backward(const RMat<S>& dloss) {
    RMat<S> g = dloss;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(S(0));
  }

  int64_t param_count() {
    int64_t n = 0;
    for (auto& p : params()) n += p.value->numel();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
};

}  // namespace onrx

#pragma once

// Adam optimizer with bias correction. Bound to a fixed parameter list at
// construction; moment buffers are laid out parallel to each tensor's data.
//
// Parameters carrying a prune mask are kept exactly sparse: masked-out
// entries have their gradient treated as zero and the weight itself re-zeroed
// after the update, so pruning survives any number of finetune steps.

#include "onrx/nn/tensor.hpp"

namespace onrx {

template <class S>
class Adam {
 public:
  explicit Adam(std::vector<ParamRef<S>> params, S lr = S(1e-3), S beta1 = S(0.9),
                S beta2 = S(0.999), S eps = S(1e-8))
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      const size_t n = params_[i].value->data.size();
      if (params_[i].grad->data.size() != n)
        throw std::invalid_argument("param/grad size mismatch");
      if (params_[i].has_mask() && params_[i].mask->size() != n)
        throw std::invalid_argument("param/mask size mismatch");
      m_[i].assign(n, S(0));
      v_[i].assign(n, S(0));
    }
  }

  void set_lr(S lr) { lr_ = lr; }
  S lr() const { return lr_; }
  int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(b1_), double(t_)));
    const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(b2_), double(t_)));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i].value->data;
      const auto& g = params_[i].grad->data;
      const auto* mask = params_[i].has_mask() ? params_[i].mask : nullptr;
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < w.size(); ++j) {
        const bool dead = mask && (*mask)[j] == 0;
        const S gj = dead ? S(0) : g[j];
        m[j] = b1_ * m[j] + (S(1) - b1_) * gj;
        v[j] = b2_ * v[j] + (S(1) - b2_) * gj * gj;
        w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        if (dead) w[j] = S(0);
      }
    }
  }

 private:
  std::vector<ParamRef<S>> params_;
  std::vector<AlignedVec<S>> m_, v_;
  S lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace onrx

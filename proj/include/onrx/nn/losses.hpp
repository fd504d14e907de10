#pragma once

// Scalar losses over batched matrices, each paired with its analytic gradient
// with respect to the prediction. Losses are means over every element, so the
// gradient already carries the 1/N factor.

#include "onrx/nn/tensor.hpp"

namespace onrx {

namespace detail {
template <class S>
inline void check_same_shape(const RMat<S>& a, const RMat<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("loss operands must have identical shapes");
}
}  // namespace detail

template <class S>
inline S mse_loss(const RMat<S>& pred, const RMat<S>& target) {
  detail::check_same_shape(pred, target);
  return (pred - target).squaredNorm() / S(pred.size());
}

template <class S>
inline RMat<S> mse_grad(const RMat<S>& pred, const RMat<S>& target) {
  detail::check_same_shape(pred, target);
  return (pred - target) * (S(2) / S(pred.size()));
}

// Binary cross-entropy on probabilities in (0,1). Predictions are clamped to
// [1e-7, 1-1e-7] before the log, and the gradient uses the clamped value, so
// saturated sigmoid outputs cannot produce infinities.
inline constexpr double kBceClamp = 1e-7;

template <class S>
inline S bce_loss(const RMat<S>& pred, const RMat<S>& target) {
  detail::check_same_shape(pred, target);
  const auto p = pred.array().max(S(kBceClamp)).min(S(1) - S(kBceClamp));
  const auto t = target.array();
  return -(t * p.log() + (S(1) - t) * (S(1) - p).log()).sum() / S(pred.size());
}

template <class S>
inline RMat<S> bce_grad(const RMat<S>& pred, const RMat<S>& target) {
  detail::check_same_shape(pred, target);
  const auto p = pred.array().max(S(kBceClamp)).min(S(1) - S(kBceClamp));
  const auto t = target.array();
  return (((p - t) / (p * (S(1) - p))) / S(pred.size())).matrix();
}

// Weighted BCE: element weights scale each term and the mean is taken over
// the weight mass, so zero-weight elements (e.g. positions near a truncated
// sequence edge) contribute nothing to loss or gradient.
template <class S>
inline S bce_loss_weighted(const RMat<S>& pred, const RMat<S>& target, const RMat<S>& weight) {
  detail::check_same_shape(pred, target);
  detail::check_same_shape(pred, weight);
  const S mass = weight.sum();
  if (!(mass > S(0))) throw std::invalid_argument("weighted bce needs positive weight mass");
  const auto p = pred.array().max(S(kBceClamp)).min(S(1) - S(kBceClamp));
  const auto t = target.array();
  return -(weight.array() * (t * p.log() + (S(1) - t) * (S(1) - p).log())).sum() / mass;
}

template <class S>
inline RMat<S> bce_grad_weighted(const RMat<S>& pred, const RMat<S>& target,
                                 const RMat<S>& weight) {
  detail::check_same_shape(pred, target);
  detail::check_same_shape(pred, weight);
  const S mass = weight.sum();
  if (!(mass > S(0))) throw std::invalid_argument("weighted bce needs positive weight mass");
  const auto p = pred.array().max(S(kBceClamp)).min(S(1) - S(kBceClamp));
  const auto t = target.array();
  return ((weight.array() * (p - t) / (p * (S(1) - p))) / mass).matrix();
}

}  // namespace onrx

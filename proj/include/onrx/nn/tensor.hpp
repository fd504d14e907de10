#pragma once

// Row-major tensor container plus the Eigen matrix aliases the NN code
// computes with. Weights live in Tensors; batched math runs on Eigen maps.

#include <Eigen/Dense>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace onrx {

template <class S>
using RMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RVec = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

// 64-byte-aligned storage for every numeric buffer the training math touches.
// Heap-address-dependent alignment changes how the compiler's vectorized
// loops split their scalar peel, which perturbs FMA contraction and breaks
// bit-reproducibility between otherwise identical runs. A fixed alignment
// makes the arithmetic independent of allocator state.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    void* p = ::operator new(n * sizeof(T), std::align_val_t(kAlign));
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

template <class S>
using AlignedVec = std::vector<S, AlignedAllocator<S>>;

template <class S>
struct Tensor {
  using Storage = AlignedVec<S>;
  std::vector<int64_t> shape;
  Storage data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> sh) : shape(std::move(sh)) {
    data.assign(static_cast<size_t>(numel_of(shape)), S(0));
  }

  static int64_t numel_of(const std::vector<int64_t>& sh) {
    int64_t n = 1;
    for (int64_t d : sh) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.empty() ? 0 : numel() / shape[0]; }

  Eigen::Map<RMat<S>> mat() { return {data.data(), rows(), cols()}; }
  Eigen::Map<const RMat<S>> mat() const { return {data.data(), rows(), cols()}; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

// Uniform +-1/sqrt(fan_in) initialization on a seeded generator.
template <class S>
inline void init_uniform_fanin(Tensor<S>& t, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) {
    const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
    v = static_cast<S>((2.0 * u - 1.0) * bound);
  }
}

template <class S>
struct ParamRef {
  Tensor<S>* value = nullptr;
  Tensor<S>* grad = nullptr;
  std::vector<uint8_t>* mask = nullptr;  // prune mask parallel to value->data; empty = dense
  const char* name = "";

  bool has_mask() const { return mask && !mask->empty(); }
};

// Weights that survive an optional prune mask; an empty mask means dense.
inline int64_t live_count(int64_t numel, const std::vector<uint8_t>& mask) {
  if (mask.empty()) return numel;
  int64_t n = 0;
  for (uint8_t m : mask) n += (m != 0);
  return n;
}

}  // namespace onrx

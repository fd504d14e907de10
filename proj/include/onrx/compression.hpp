#pragma once

// Model compression: block-structured pruning and mixed-scheme weight
// quantization, plus an integer inference emulator that mirrors what a
// fixed-point deployment of the compressed feed-forward models computes.
//
// Pruning removes whole rows and columns inside fixed-size blocks of each
// weight matrix, so the survivors stay dense sub-blocks a systolic array can
// stream. Which lines die is decided by an ADMM loop: the model trains
// against a quadratic pull toward its own projection onto the sparsity set,
// the projection is refreshed between training phases, and the final
// projection becomes a hard mask. Masked weights are kept at exactly zero by
// the optimizer from then on (see Adam), so fine-tuning cannot resurrect
// them.
//
// Quantization assigns each weight row one of two b-bit grids: low-variance
// rows get sign/exponent codes (multiplication by them is a barrel shift),
// high-variance rows get two's complement fixed-point codes. Scales are
// per-row. Fine-tuning under quantization runs straight-through: forward
// passes see grid weights, the optimizer steps float master weights.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "onrx/nn/models.hpp"
#include "onrx/nn/quant.hpp"

namespace onrx {

// ---------------------------------------------------------------------------
// Block-structured pruning
// ---------------------------------------------------------------------------

struct BlockPartition {
  int64_t block_rows = 16;
  int64_t block_cols = 16;
};

struct AdmmOptions {
  int iterations = 5;    // penalty-training / reprojection rounds
  double rho = 1e-3;     // penalty strength
  double slack = 0.025;  // projection headroom below the 1/rate budget, so
                         // the post-rounding kept fraction lands under it
};

// Pruned lines of one block, indexed from the block's top-left corner.
struct BlockLines {
  std::vector<int64_t> rows, cols;
};

struct MatrixPrune {
  size_t param_index = 0;  // position in the model's all_params() order
  int64_t rows = 0, cols = 0;
  int64_t grid_rows = 0, grid_cols = 0;
  std::vector<uint8_t> mask;       // 1 = kept, row-major, parallel to the tensor
  std::vector<BlockLines> blocks;  // row-major over the block grid
};

struct PruneMask {
  std::vector<MatrixPrune> matrices;
  double kept_fraction = 1.0;  // surviving weights / prunable weights
};

namespace detail {

template <class S>
struct MatView {
  int64_t rows = 0, cols = 0;
  const S* data = nullptr;
  const char* name = "";
};

struct LineCandidate {
  double rms;
  uint32_t mat;
  int64_t block;
  uint8_t is_col;
  int64_t line;  // absolute row or column index in the matrix

  bool operator<(const LineCandidate& o) const {
    if (rms != o.rms) return rms < o.rms;
    if (mat != o.mat) return mat < o.mat;
    if (block != o.block) return block < o.block;
    if (is_col != o.is_col) return is_col < o.is_col;
    return line < o.line;
  }
};

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// Projection onto the block-structured sparsity set: rank every block's rows
// and columns globally by RMS (edge blocks are smaller, so mean-square keeps
// the comparison fair) and zero the weakest lines until the surviving weight
// fraction drops to the target. Overlap inside a block is counted once, and
// ties break deterministically. Throws if the target cannot be met without
// emptying a matrix.
template <class S>
PruneMask bcr_project(const std::vector<MatView<S>>& views, const BlockPartition& part,
                      double target_kept) {
  if (part.block_rows < 1 || part.block_cols < 1)
    throw std::invalid_argument("block partition dims must be positive");

  PruneMask out;
  out.matrices.resize(views.size());
  int64_t total = 0;
  for (size_t v = 0; v < views.size(); ++v) {
    auto& m = out.matrices[v];
    m.rows = views[v].rows;
    m.cols = views[v].cols;
    m.grid_rows = ceil_div(m.rows, part.block_rows);
    m.grid_cols = ceil_div(m.cols, part.block_cols);
    m.mask.assign(static_cast<size_t>(m.rows * m.cols), 1);
    m.blocks.resize(static_cast<size_t>(m.grid_rows * m.grid_cols));
    total += m.rows * m.cols;
  }
  const auto target = static_cast<int64_t>(std::floor(double(total) * target_kept + 1e-9));

  std::vector<LineCandidate> cands;
  for (size_t v = 0; v < views.size(); ++v) {
    const auto& m = out.matrices[v];
    const S* d = views[v].data;
    for (int64_t bi = 0; bi < m.grid_rows; ++bi) {
      const int64_t r0 = bi * part.block_rows;
      const int64_t r1 = std::min(m.rows, r0 + part.block_rows);
      for (int64_t bj = 0; bj < m.grid_cols; ++bj) {
        const int64_t c0 = bj * part.block_cols;
        const int64_t c1 = std::min(m.cols, c0 + part.block_cols);
        const int64_t block = bi * m.grid_cols + bj;
        for (int64_t r = r0; r < r1; ++r) {
          double sq = 0.0;
          for (int64_t c = c0; c < c1; ++c) {
            const double w = double(d[r * m.cols + c]);
            sq += w * w;
          }
          cands.push_back({std::sqrt(sq / double(c1 - c0)), uint32_t(v), block, 0, r});
        }
        for (int64_t c = c0; c < c1; ++c) {
          double sq = 0.0;
          for (int64_t r = r0; r < r1; ++r) {
            const double w = double(d[r * m.cols + c]);
            sq += w * w;
          }
          cands.push_back({std::sqrt(sq / double(r1 - r0)), uint32_t(v), block, 1, c});
        }
      }
    }
  }
  std::sort(cands.begin(), cands.end());

  int64_t kept = total;
  std::vector<int64_t> mat_kept(views.size());
  for (size_t v = 0; v < views.size(); ++v) mat_kept[v] = views[v].rows * views[v].cols;

  for (const auto& c : cands) {
    if (kept <= target) break;
    auto& m = out.matrices[c.mat];
    const int64_t bi = c.block / m.grid_cols;
    const int64_t bj = c.block % m.grid_cols;
    const int64_t r0 = bi * part.block_rows;
    const int64_t r1 = std::min(m.rows, r0 + part.block_rows);
    const int64_t c0 = bj * part.block_cols;
    const int64_t c1 = std::min(m.cols, c0 + part.block_cols);
    int64_t newly = 0;
    if (c.is_col) {
      for (int64_t r = r0; r < r1; ++r) {
        auto& bit = m.mask[static_cast<size_t>(r * m.cols + c.line)];
        if (bit) {
          bit = 0;
          ++newly;
        }
      }
      if (newly) m.blocks[static_cast<size_t>(c.block)].cols.push_back(c.line - c0);
    } else {
      for (int64_t cc = c0; cc < c1; ++cc) {
        auto& bit = m.mask[static_cast<size_t>(c.line * m.cols + cc)];
        if (bit) {
          bit = 0;
          ++newly;
        }
      }
      if (newly) m.blocks[static_cast<size_t>(c.block)].rows.push_back(c.line - r0);
    }
    kept -= newly;
    mat_kept[c.mat] -= newly;
  }

  for (size_t v = 0; v < views.size(); ++v) {
    if (mat_kept[v] == 0)
      throw std::invalid_argument(std::string("pruning rate would empty ") + views[v].name);
    for (auto& b : out.matrices[v].blocks) {
      std::sort(b.rows.begin(), b.rows.end());
      std::sort(b.cols.begin(), b.cols.end());
    }
  }

  out.kept_fraction = double(kept) / double(total);
  return out;
}

}  // namespace detail

// ADMM state for one pruning pass. The auxiliary variable Z always sits on
// the sparsity set; U accumulates the running disagreement between the model
// and Z. Workflow: construct from the trained model, interleave penalty
// training (add_penalty_grads as a pre-step training hook) with reproject(),
// then finalize() to install hard masks. The object addresses parameters by
// their position in all_params() order, so hooks can run on a warm-started
// training copy of the same architecture.
template <class S>
class BcrAdmm {
 public:
  BcrAdmm(ModelParams<S> mp, double rate, BlockPartition part = {}, AdmmOptions opt = {})
      : rate_(rate), part_(part), opt_(opt) {
    if (!(rate >= 1.0)) throw std::invalid_argument("pruning rate must be at least 1");
    if (!(opt_.slack >= 0.0 && opt_.slack < 1.0))
      throw std::invalid_argument("projection slack must be in [0,1)");
    n_params_ = mp.params.size();
    for (size_t i = 0; i < mp.params.size(); ++i) {
      const auto& p = mp.params[i];
      if (p.mask != nullptr && p.value->shape.size() == 2) {
        prunable_.push_back(i);
        shapes_.push_back(p.value->shape);
        names_.push_back(p.name);
      }
    }
    if (prunable_.empty()) throw std::invalid_argument("model has no prunable weight matrices");
    target_kept_ = rate_ == 1.0 ? 1.0 : (1.0 - opt_.slack) / rate_;

    const PruneMask pm = project(mp.params, false);
    z_.resize(prunable_.size());
    u_.resize(prunable_.size());
    for (size_t k = 0; k < prunable_.size(); ++k) {
      const auto& w = mp.params[prunable_[k]].value->data;
      z_[k].assign(w.begin(), w.end());
      const auto& mask = pm.matrices[k].mask;
      for (size_t j = 0; j < z_[k].size(); ++j)
        if (!mask[j]) z_[k][j] = S(0);
      u_[k].assign(w.size(), S(0));
    }
  }

  double rate() const { return rate_; }
  double target_kept_fraction() const { return target_kept_; }
  const AdmmOptions& options() const { return opt_; }

  // Gradient of the penalty rho * ||W - Z + U||^2, added on top of the task
  // gradients. Install as the pre-step hook of a training phase.
  void add_penalty_grads(const std::vector<ParamRef<S>>& live) const {
    verify(live);
    const S two_rho = static_cast<S>(2.0 * opt_.rho);
    for (size_t k = 0; k < prunable_.size(); ++k) {
      const auto& p = live[prunable_[k]];
      const auto& w = p.value->data;
      auto& g = p.grad->data;
      for (size_t j = 0; j < w.size(); ++j) g[j] += two_rho * (w[j] - z_[k][j] + u_[k][j]);
    }
  }

  // Between training phases: Z = project(W + U), then U += W - Z.
  void reproject(const std::vector<ParamRef<S>>& live) {
    verify(live);
    const PruneMask pm = project(live, true);
    for (size_t k = 0; k < prunable_.size(); ++k) {
      const auto& w = live[prunable_[k]].value->data;
      const auto& mask = pm.matrices[k].mask;
      for (size_t j = 0; j < w.size(); ++j) {
        z_[k][j] = mask[j] ? w[j] + u_[k][j] : S(0);
        u_[k][j] += w[j] - z_[k][j];
      }
    }
  }

  // Hard prune: project the current weights, zero the dead lines, and
  // install the masks on the model so further training keeps them zero.
  PruneMask finalize(ModelParams<S> mp) {
    verify(mp.params);
    PruneMask pm = project(mp.params, false);
    for (size_t k = 0; k < prunable_.size(); ++k) {
      const auto& p = mp.params[prunable_[k]];
      const auto& mask = pm.matrices[k].mask;
      *p.mask = mask;
      auto& w = p.value->data;
      for (size_t j = 0; j < w.size(); ++j)
        if (!mask[j]) w[j] = S(0);
    }
    return pm;
  }

 private:
  PruneMask project(const std::vector<ParamRef<S>>& live, bool add_dual) const {
    std::vector<AlignedVec<S>> tmp;
    std::vector<detail::MatView<S>> views(prunable_.size());
    if (add_dual) tmp.resize(prunable_.size());
    for (size_t k = 0; k < prunable_.size(); ++k) {
      const auto& t = *live[prunable_[k]].value;
      const S* data = t.data.data();
      if (add_dual) {
        tmp[k].resize(t.data.size());
        for (size_t j = 0; j < t.data.size(); ++j) tmp[k][j] = t.data[j] + u_[k][j];
        data = tmp[k].data();
      }
      views[k] = {t.rows(), t.cols(), data, names_[k]};
    }
    PruneMask pm = detail::bcr_project(views, part_, target_kept_);
    for (size_t k = 0; k < prunable_.size(); ++k) pm.matrices[k].param_index = prunable_[k];
    return pm;
  }

  void verify(const std::vector<ParamRef<S>>& live) const {
    if (live.size() != n_params_)
      throw std::invalid_argument("model structure differs from the pruning state");
    for (size_t k = 0; k < prunable_.size(); ++k) {
      const auto& p = live[prunable_[k]];
      if (!p.mask || p.value->shape != shapes_[k])
        throw std::invalid_argument("model structure differs from the pruning state");
    }
  }

  double rate_;
  BlockPartition part_;
  AdmmOptions opt_;
  double target_kept_ = 1.0;
  size_t n_params_ = 0;
  std::vector<size_t> prunable_;
  std::vector<std::vector<int64_t>> shapes_;
  std::vector<const char*> names_;
  std::vector<AlignedVec<S>> z_, u_;
};

// One-call pruning pass. train_phase runs once per ADMM iteration and must
// advance the live model in place, typically by training a warm-started copy
// with add_penalty_grads installed as the pre-step hook and copying the
// result back. Rate 1.0 installs all-ones masks and changes nothing else.
// The caller fine-tunes afterwards; the installed masks hold pruned weights
// at exactly zero through that.
template <class S>
PruneMask bcr_prune(ModelParams<S> mp, double rate,
                    const std::function<void(BcrAdmm<S>&, int)>& train_phase = {},
                    const BlockPartition& part = {}, const AdmmOptions& opt = {}) {
  if (opt.iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  BcrAdmm<S> admm(mp, rate, part, opt);
  if (rate > 1.0) {
    for (int it = 0; it < opt.iterations; ++it) {
      if (train_phase) train_phase(admm, it);
      admm.reproject(mp.params);
    }
  }
  return admm.finalize(mp);
}

// ---------------------------------------------------------------------------
// Mixed-scheme quantization
// ---------------------------------------------------------------------------

struct MsqOptions {
  int bits = 8;        // weight code width, 4 or 8
  double split = 0.5;  // fraction of rows (lowest variance first) on the pow2 grid
};

namespace detail {

template <class S>
void snap_tensor(Tensor<S>& t, const TensorQuant& tq) {
  if (!tq.active()) return;
  const int bits = tq.bits;
  const int64_t rows = t.rows(), cols = t.cols();
  if (static_cast<int64_t>(tq.rows.size()) != rows)
    throw std::invalid_argument("quantization metadata does not match the tensor");
  for (int64_t r = 0; r < rows; ++r) {
    const RowQuant& rq = tq.rows[static_cast<size_t>(r)];
    for (int64_t c = 0; c < cols; ++c) {
      S& w = t.data[static_cast<size_t>(r * cols + c)];
      w = static_cast<S>(dequant_code(rq, bits, quant_nearest_code(rq, bits, double(w))));
    }
  }
}

}  // namespace detail

// Quantizes every 2-D weight matrix of the model in place and stores the
// grid metadata on it. Rows are ranked by weight variance; the low half gets
// the pow2 grid (shift-only multiplies), the rest fixed-point, with per-row
// max|w| scales. All-zero rows always take the pow2 grid, whose zero code
// represents them exactly. Pruned (masked) weights are zero and snap to the
// zero code, so masks survive. Biases and other 1-D parameters stay float.
template <class S>
void msq_quantize(ModelParams<S> mp, const MsqOptions& opt = {}) {
  if (opt.bits != 4 && opt.bits != 8) throw std::invalid_argument("weight bits must be 4 or 8");
  if (!(opt.split >= 0.0 && opt.split <= 1.0))
    throw std::invalid_argument("pow2 row split must be in [0,1]");
  const auto levels = double((int64_t(1) << (opt.bits - 1)) - 1);
  for (size_t i = 0; i < mp.params.size(); ++i) {
    Tensor<S>& t = *mp.params[i].value;
    if (t.shape.size() != 2) continue;
    const int64_t rows = t.rows(), cols = t.cols();

    std::vector<double> var(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (int64_t c = 0; c < cols; ++c) mean += double(t.data[size_t(r * cols + c)]);
      mean /= double(cols);
      double acc = 0.0;
      for (int64_t c = 0; c < cols; ++c) {
        const double d = double(t.data[size_t(r * cols + c)]) - mean;
        acc += d * d;
      }
      var[static_cast<size_t>(r)] = acc / double(cols);
    }
    std::vector<int64_t> order(static_cast<size_t>(rows));
    std::iota(order.begin(), order.end(), int64_t(0));
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      if (var[size_t(a)] != var[size_t(b)]) return var[size_t(a)] < var[size_t(b)];
      return a < b;
    });
    const int64_t n_pow2 =
        std::clamp<int64_t>(std::llround(opt.split * double(rows)), 0, rows);
    std::vector<uint8_t> is_pow2(static_cast<size_t>(rows), 0);
    for (int64_t k = 0; k < n_pow2; ++k) is_pow2[static_cast<size_t>(order[size_t(k)])] = 1;

    TensorQuant tq;
    tq.bits = static_cast<uint8_t>(opt.bits);
    tq.rows.resize(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      double maxabs = 0.0;
      for (int64_t c = 0; c < cols; ++c)
        maxabs = std::max(maxabs, std::abs(double(t.data[size_t(r * cols + c)])));
      RowQuant& rq = tq.rows[static_cast<size_t>(r)];
      if (maxabs == 0.0) {
        rq = {QuantScheme::pow2, 0, 0.0f};
      } else if (is_pow2[static_cast<size_t>(r)]) {
        rq = {QuantScheme::pow2, 0, static_cast<float>(maxabs)};
      } else {
        rq = {QuantScheme::fixed_point, 0, static_cast<float>(maxabs / levels)};
      }
    }
    detail::snap_tensor(t, tq);
    *mp.quant[i] = std::move(tq);
  }
}

// Re-snaps a model's weights to its stored grids. Used after straight-through
// fine-tuning, where the optimizer's master weights drift off the grid.
template <class S>
void msq_apply(ModelParams<S> mp) {
  for (size_t i = 0; i < mp.params.size(); ++i)
    if (mp.params[i].value->shape.size() == 2 && mp.quant[i]->active())
      detail::snap_tensor(*mp.params[i].value, *mp.quant[i]);
}

// Straight-through-estimator shim for fine-tuning a quantized model: install
// quantize_for_forward as the pre-forward training hook and restore_master
// as the pre-step hook. Forward and backward then run on grid weights while
// the optimizer steps the float master copy; sub-step updates accumulate in
// the master instead of being rounded away each batch. Grids stay frozen at
// their calibration. The trainer's validation losses are computed on the
// master weights, which track the grid loss to within a grid step; apply()
// writes the final grid weights and metadata.
template <class S>
class MsqSte {
 public:
  explicit MsqSte(ModelParams<S> mp) {
    bool any = false;
    for (size_t i = 0; i < mp.params.size(); ++i) {
      tables_.push_back(*mp.quant[i]);
      sizes_.push_back(mp.params[i].value->data.size());
      any = any || tables_.back().active();
    }
    if (!any) throw std::invalid_argument("straight-through fine-tuning needs a quantized model");
    cache_.resize(tables_.size());
  }

  void quantize_for_forward(const std::vector<ParamRef<S>>& live) {
    verify(live);
    if (holding_) throw std::logic_error("quantize/restore calls must alternate");
    for (size_t i = 0; i < tables_.size(); ++i) {
      if (!tables_[i].active()) continue;
      cache_[i] = live[i].value->data;
      detail::snap_tensor(*live[i].value, tables_[i]);
    }
    holding_ = true;
  }

  void restore_master(const std::vector<ParamRef<S>>& live) {
    verify(live);
    if (!holding_) throw std::logic_error("no cached master weights to restore");
    for (size_t i = 0; i < tables_.size(); ++i)
      if (tables_[i].active()) live[i].value->data = cache_[i];
    holding_ = false;
  }

  // End-of-training snap: grid weights plus the frozen grid metadata.
  void apply(ModelParams<S> mp) const {
    if (mp.params.size() != tables_.size())
      throw std::invalid_argument("model structure differs from the fine-tuning state");
    for (size_t i = 0; i < tables_.size(); ++i) {
      *mp.quant[i] = tables_[i];
      if (tables_[i].active()) detail::snap_tensor(*mp.params[i].value, tables_[i]);
    }
  }

 private:
  void verify(const std::vector<ParamRef<S>>& live) const {
    if (live.size() != tables_.size())
      throw std::invalid_argument("model structure differs from the fine-tuning state");
    for (size_t i = 0; i < tables_.size(); ++i)
      if (live[i].value->data.size() != sizes_[i])
        throw std::invalid_argument("model structure differs from the fine-tuning state");
  }

  std::vector<TensorQuant> tables_;
  std::vector<size_t> sizes_;
  std::vector<AlignedVec<S>> cache_;
  bool holding_ = false;
};

// ---------------------------------------------------------------------------
// Integer inference emulator
// ---------------------------------------------------------------------------

struct QuantStats {
  int64_t saturated = 0;  // requantized values clipped to the int16 range
  int64_t mult_ops = 0;   // integer multiplies (fixed-point weight rows)
  int64_t shift_ops = 0;  // barrel shifts (pow2 weight rows)
};

namespace detail {

struct QuantStage {
  int64_t in = 0, out = 0;
  std::vector<int64_t> w;          // integer weight codes, row-major
  std::vector<uint8_t> row_shift;  // 1 = pow2 row, MACs are shifts
  std::vector<double> row_unit;    // weight value of one code unit
  std::vector<double> bias;        // applied at the requantization step
  int64_t n_mult_w = 0, n_shift_w = 0;
  bool relu_after = false;
  bool fused_sigmoid = false;
  int out_exp = -15;  // output activations are codes times 2^out_exp
};

}  // namespace detail

// Bit-exact emulation of a quantized feed-forward stack on integer
// arithmetic. Activations travel between layers as int16 codes on per-layer
// power-of-two scales calibrated from a reference batch; each linear layer
// accumulates integer products in 64 bits (fixed-point rows multiply, pow2
// rows shift) and requantizes through one rounded rescale, counting
// saturations. Sigmoid outputs come from a piecewise-linear 1024-segment
// table over [-16, 16) with int16 codes at scale 2^-15; the table feeds
// directly on the layer's accumulator, so no precision is discarded before
// the nonlinearity. Emulated outputs differ from float inference on the same
// grid weights only by the accumulated requantization rounding; for the
// shallow demapper that stays within two of the largest activation step.
// Repeated runs are bit-identical.
//
// Pow2 rows keep exponents within 30 of the row's largest live exponent;
// anything further down is below 2^-30 of the row peak and is dropped to
// zero, which bounds the code spread so 64-bit accumulators cannot wrap.
class QuantizedMlp {
 public:
  template <class S>
  QuantizedMlp(const Mlp<S>& m, const std::vector<TensorQuant>& quant, const RMat<S>& calib) {
    build_sigmoid_table();
    size_t param_idx = 0;
    for (const auto& layer : m.layers()) {
      if (const auto* lin = dynamic_cast<const LinearLayer<S>*>(layer.get())) {
        if (param_idx >= quant.size() || !quant[param_idx].active())
          throw std::invalid_argument("integer emulation needs fully quantized weights");
        add_stage(*lin, quant[param_idx]);
        param_idx += 2;
        continue;
      }
      if (dynamic_cast<const DropoutLayer<S>*>(layer.get())) continue;
      if (dynamic_cast<const ReluLayer<S>*>(layer.get())) {
        if (stages_.empty() || stages_.back().fused_sigmoid)
          throw std::invalid_argument("unsupported activation placement");
        stages_.back().relu_after = true;
        continue;
      }
      if (dynamic_cast<const SigmoidLayer<S>*>(layer.get())) {
        if (stages_.empty() || stages_.back().relu_after || stages_.back().fused_sigmoid)
          throw std::invalid_argument("unsupported activation placement");
        stages_.back().fused_sigmoid = true;
        continue;
      }
      throw std::invalid_argument("integer emulation covers feed-forward stacks only");
    }
    if (stages_.empty()) throw std::invalid_argument("no linear layers to emulate");
    for (size_t i = 1; i < stages_.size(); ++i)
      if (stages_[i].in != stages_[i - 1].out)
        throw std::invalid_argument("linear layer widths do not chain");
    calibrate(calib);
  }

  RMat<float> infer(const RMat<float>& x, QuantStats* stats = nullptr) const {
    if (x.cols() != stages_.front().in) throw std::invalid_argument("input width mismatch");
    const int64_t B = x.rows();
    std::vector<int32_t> cur(static_cast<size_t>(B * stages_.front().in));
    const double in_step = std::ldexp(1.0, in_exp_);
    for (int64_t r = 0; r < B; ++r)
      for (int64_t j = 0; j < stages_.front().in; ++j)
        cur[static_cast<size_t>(r * stages_.front().in + j)] =
            requant(double(x(r, j)) / in_step, stats);

    int cur_exp = in_exp_;
    std::vector<int32_t> nxt;
    for (const auto& st : stages_) {
      nxt.assign(static_cast<size_t>(B * st.out), 0);
      const double acc_gain = std::ldexp(1.0, cur_exp);
      for (int64_t r = 0; r < B; ++r) {
        const int32_t* xin = &cur[static_cast<size_t>(r * st.in)];
        for (int64_t o = 0; o < st.out; ++o) {
          const int64_t* wrow = &st.w[static_cast<size_t>(o * st.in)];
          int64_t acc = 0;
          for (int64_t j = 0; j < st.in; ++j) acc += wrow[j] * int64_t(xin[j]);
          double v = double(acc) * (st.row_unit[static_cast<size_t>(o)] * acc_gain) +
                     st.bias[static_cast<size_t>(o)];
          int32_t code;
          if (st.fused_sigmoid) {
            code = sigmoid_code(v);
          } else {
            if (st.relu_after && v < 0.0) v = 0.0;
            code = requant(v / std::ldexp(1.0, st.out_exp), stats);
          }
          nxt[static_cast<size_t>(r * st.out + o)] = code;
        }
      }
      if (stats) {
        stats->mult_ops += B * st.n_mult_w;
        stats->shift_ops += B * st.n_shift_w;
      }
      cur.swap(nxt);
      cur_exp = st.out_exp;
    }

    const int64_t out_dim = stages_.back().out;
    RMat<float> out(B, out_dim);
    const double out_step = std::ldexp(1.0, cur_exp);
    for (int64_t r = 0; r < B; ++r)
      for (int64_t o = 0; o < out_dim; ++o)
        out(r, o) = static_cast<float>(double(cur[static_cast<size_t>(r * out_dim + o)]) * out_step);
    return out;
  }

  int input_exp() const { return in_exp_; }

  // Largest activation quantization step across the pipeline's boundaries,
  // the unit the accuracy contract is stated in.
  double max_activation_step() const {
    double step = std::ldexp(1.0, in_exp_);
    for (const auto& st : stages_) step = std::max(step, std::ldexp(1.0, st.out_exp));
    return step;
  }

  int64_t mult_weights() const {
    int64_t n = 0;
    for (const auto& st : stages_) n += st.n_mult_w;
    return n;
  }
  int64_t shift_weights() const {
    int64_t n = 0;
    for (const auto& st : stages_) n += st.n_shift_w;
    return n;
  }

 private:
  static constexpr int kSigmoidSegments = 1024;
  static constexpr double kSigmoidRange = 16.0;  // table spans [-16, 16)

  void build_sigmoid_table() {
    for (int i = 0; i <= kSigmoidSegments; ++i) {
      const double x = -kSigmoidRange + double(i) * (2.0 * kSigmoidRange / kSigmoidSegments);
      const double v = 1.0 / (1.0 + std::exp(-x));
      lut_[static_cast<size_t>(i)] =
          static_cast<int16_t>(std::min<int64_t>(32767, std::llround(v * 32768.0)));
    }
  }

  int32_t sigmoid_code(double x) const {
    if (x <= -kSigmoidRange) return lut_.front();
    if (x >= kSigmoidRange) return lut_.back();
    const double u = (x + kSigmoidRange) * (kSigmoidSegments / (2.0 * kSigmoidRange));
    int64_t i = static_cast<int64_t>(std::floor(u));
    i = std::clamp<int64_t>(i, 0, kSigmoidSegments - 1);
    const double frac = u - double(i);
    const double a = double(lut_[static_cast<size_t>(i)]);
    const double b = double(lut_[static_cast<size_t>(i + 1)]);
    return static_cast<int32_t>(std::llround(a + (b - a) * frac));
  }

  static int32_t requant(double units, QuantStats* stats) {
    int64_t q = std::llround(units);
    if (q > 32767 || q < -32767) {
      q = std::clamp<int64_t>(q, -32767, 32767);
      if (stats) ++stats->saturated;
    }
    return static_cast<int32_t>(q);
  }

  template <class S>
  void add_stage(const LinearLayer<S>& lin, const TensorQuant& tq) {
    detail::QuantStage st;
    st.out = lin.weight().shape[0];
    st.in = lin.weight().shape[1];
    st.w.assign(static_cast<size_t>(st.in * st.out), 0);
    st.row_shift.assign(static_cast<size_t>(st.out), 0);
    st.row_unit.assign(static_cast<size_t>(st.out), 0.0);
    st.bias.resize(static_cast<size_t>(st.out));
    const int bits = tq.bits;
    if (static_cast<int64_t>(tq.rows.size()) != st.out)
      throw std::invalid_argument("quantization metadata does not match the tensor");

    for (int64_t r = 0; r < st.out; ++r) {
      const RowQuant& rq = tq.rows[static_cast<size_t>(r)];
      st.bias[static_cast<size_t>(r)] = double(lin.bias().data[static_cast<size_t>(r)]);
      if (rq.scheme == QuantScheme::fixed_point) {
        st.row_unit[static_cast<size_t>(r)] = double(rq.scale);
        for (int64_t c = 0; c < st.in; ++c) {
          const double w = double(lin.weight().data[static_cast<size_t>(r * st.in + c)]);
          const uint64_t code = quant_nearest_code(rq, bits, w);
          int64_t s = static_cast<int64_t>(code);
          if (s >= (int64_t(1) << (bits - 1))) s -= int64_t(1) << bits;
          st.w[static_cast<size_t>(r * st.in + c)] = s;
          if (s != 0) ++st.n_mult_w;
        }
      } else {
        st.row_shift[static_cast<size_t>(r)] = 1;
        std::vector<int> es(static_cast<size_t>(st.in), 0);
        std::vector<int> sg(static_cast<size_t>(st.in), 0);
        int e_max = 0;
        bool any = false;
        for (int64_t c = 0; c < st.in; ++c) {
          const double w = double(lin.weight().data[static_cast<size_t>(r * st.in + c)]);
          const uint64_t code = quant_nearest_code(rq, bits, w);
          if (code == 0) continue;
          const int64_t idx = static_cast<int64_t>(code & ((uint64_t(1) << (bits - 1)) - 1));
          if (idx == 0) continue;
          const int e = int(rq.max_exp) - int(idx - 1);
          es[static_cast<size_t>(c)] = e;
          sg[static_cast<size_t>(c)] = (code >> (bits - 1)) ? -1 : 1;
          e_max = any ? std::max(e_max, e) : e;
          any = true;
        }
        if (!any) continue;  // all-zero row: unit 0, bias-only output
        const int e_floor = e_max - 30;
        int e_min = e_max;
        for (int64_t c = 0; c < st.in; ++c)
          if (sg[static_cast<size_t>(c)] != 0 && es[static_cast<size_t>(c)] >= e_floor)
            e_min = std::min(e_min, es[static_cast<size_t>(c)]);
        st.row_unit[static_cast<size_t>(r)] = std::ldexp(double(rq.scale), e_min);
        for (int64_t c = 0; c < st.in; ++c) {
          if (sg[static_cast<size_t>(c)] == 0 || es[static_cast<size_t>(c)] < e_floor) continue;
          const int64_t mag = int64_t(1) << (es[static_cast<size_t>(c)] - e_min);
          st.w[static_cast<size_t>(r * st.in + c)] = sg[static_cast<size_t>(c)] * mag;
          ++st.n_shift_w;
        }
      }
    }
    stages_.push_back(std::move(st));
  }

  // Power-of-two activation scales from a float replay of the stage math on
  // the reference batch: the smallest 2^e whose int16 span covers the
  // observed range. The replay uses the reconstructed grid weights, so the
  // float reference and the integer path share one weight realization.
  template <class S>
  void calibrate(const RMat<S>& calib) {
    if (calib.rows() == 0 || calib.cols() != stages_.front().in)
      throw std::invalid_argument("calibration batch must be non-empty and match the input width");
    RMat<double> x = calib.template cast<double>();
    in_exp_ = exp_for(x.array().abs().maxCoeff());
    for (auto& st : stages_) {
      RMat<double> y(x.rows(), st.out);
      for (int64_t r = 0; r < x.rows(); ++r) {
        for (int64_t o = 0; o < st.out; ++o) {
          double acc = 0.0;
          for (int64_t j = 0; j < st.in; ++j)
            acc += double(st.w[static_cast<size_t>(o * st.in + j)]) *
                   st.row_unit[static_cast<size_t>(o)] * x(r, j);
          y(r, o) = acc + st.bias[static_cast<size_t>(o)];
        }
      }
      if (st.relu_after) y = y.cwiseMax(0.0);
      if (st.fused_sigmoid) {
        st.out_exp = -15;
        y = (1.0 / (1.0 + (-y.array()).exp())).matrix();
      } else {
        st.out_exp = exp_for(y.array().abs().maxCoeff());
      }
      x = std::move(y);
    }
  }

  static int exp_for(double maxabs) {
    if (!(maxabs > 0.0)) return -15;
    int e = static_cast<int>(std::ceil(std::log2(maxabs / 32767.0)));
    e = std::clamp(e, -62, 62);
    while (std::ldexp(32767.0, e) < maxabs && e < 62) ++e;
    return e;
  }

  std::vector<detail::QuantStage> stages_;
  int in_exp_ = -15;
  std::array<int16_t, kSigmoidSegments + 1> lut_{};
};

template <class S>
inline QuantizedMlp build_quantized(const DemapperModel<S>& m, const RMat<S>& calib) {
  return QuantizedMlp(m.net, m.quant, calib);
}

template <class S>
inline std::pair<QuantizedMlp, QuantizedMlp> build_quantized(const ChanestModel<S>& m,
                                                             const RMat<S>& calib) {
  return {QuantizedMlp(m.real, m.quant_real, calib), QuantizedMlp(m.imag, m.quant_imag, calib)};
}

// The recurrent trunk carries state across thousands of timesteps; a
// faithful integer emulation of it is out of scope, and pretending with a
// float path would defeat the point of the emulator.
template <class S>
inline QuantizedMlp build_quantized(const DecoderModel<S>&, const RMat<S>&) {
  throw std::invalid_argument("integer emulation covers the feed-forward models only");
}

// ---------------------------------------------------------------------------
// Compression accounting
// ---------------------------------------------------------------------------

struct CompressionReport {
  std::string label;
  double pruning_rate = 1.0;  // nominal rate the masks were built for
  int weight_bits = 32;       // quantized code width, 32 when unquantized
  double size_compression = 1.0;
  double kept_fraction = 1.0;  // measured surviving fraction of prunable weights
  int64_t mult_weights = 0;    // surviving weights on fixed-point rows
  int64_t shift_weights = 0;   // surviving weights on pow2 rows
  int64_t zero_weights = 0;    // pruned or snapped-to-zero matrix entries
  int64_t float_params = 0;    // unquantized parameters (biases and such)

  std::string to_json() const {
    std::string s = "{\n";
    s += "  \"label\": \"" + label + "\",\n";
    s += "  \"pruning_rate\": " + std::to_string(pruning_rate) + ",\n";
    s += "  \"weight_bits\": " + std::to_string(weight_bits) + ",\n";
    s += "  \"size_compression\": " + std::to_string(size_compression) + ",\n";
    s += "  \"kept_fraction\": " + std::to_string(kept_fraction) + ",\n";
    s += "  \"mult_weights\": " + std::to_string(mult_weights) + ",\n";
    s += "  \"shift_weights\": " + std::to_string(shift_weights) + ",\n";
    s += "  \"zero_weights\": " + std::to_string(zero_weights) + ",\n";
    s += "  \"float_params\": " + std::to_string(float_params) + "\n";
    s += "}\n";
    return s;
  }

  std::string to_text() const {
    std::string s;
    if (!label.empty()) s += label + "\n";
    s += "  pruning rate      " + std::to_string(pruning_rate) + "\n";
    s += "  weight bits       " + std::to_string(weight_bits) + "\n";
    s += "  size compression  " + std::to_string(size_compression) + "x\n";
    s += "  kept fraction     " + std::to_string(kept_fraction) + "\n";
    s += "  multiply weights  " + std::to_string(mult_weights) + "\n";
    s += "  shift weights     " + std::to_string(shift_weights) + "\n";
    s += "  zero weights      " + std::to_string(zero_weights) + "\n";
    s += "  float params      " + std::to_string(float_params) + "\n";
    return s;
  }
};

// Storage and operation accounting for a (possibly) compressed model. Size
// compression multiplies the pruning rate by the 32/bits storage ratio:
// rate 2 at 8 bits and rate 1 at 4 bits both give 8x, an uncompressed model
// gives 1x. The mult/shift split counts surviving weights by their row
// scheme, the per-inference operation mix of the integer emulator.
template <class S>
CompressionReport compression_report(ModelParams<S> mp, double pruning_rate,
                                     std::string label = {}) {
  if (!(pruning_rate >= 1.0)) throw std::invalid_argument("pruning rate must be at least 1");
  CompressionReport rep;
  rep.label = std::move(label);
  rep.pruning_rate = pruning_rate;
  int bits = 0;
  int64_t prunable_total = 0, prunable_live = 0;
  for (size_t i = 0; i < mp.params.size(); ++i) {
    const auto& p = mp.params[i];
    const Tensor<S>& t = *p.value;
    const TensorQuant& tq = *mp.quant[i];
    if (t.shape.size() == 2 && p.mask) {
      prunable_total += t.numel();
      prunable_live += live_count(t.numel(), *p.mask);
    }
    if (t.shape.size() == 2 && tq.active()) {
      bits = std::max(bits, int(tq.bits));
      const int64_t cols = t.cols();
      for (int64_t r = 0; r < t.rows(); ++r) {
        const bool shift_row = tq.rows[static_cast<size_t>(r)].scheme == QuantScheme::pow2;
        for (int64_t c = 0; c < cols; ++c) {
          if (double(t.data[static_cast<size_t>(r * cols + c)]) == 0.0)
            ++rep.zero_weights;
          else if (shift_row)
            ++rep.shift_weights;
          else
            ++rep.mult_weights;
        }
      }
    } else {
      rep.float_params += t.numel();
    }
  }
  rep.weight_bits = bits == 0 ? 32 : bits;
  rep.kept_fraction = prunable_total ? double(prunable_live) / double(prunable_total) : 1.0;
  rep.size_compression = pruning_rate * 32.0 / double(rep.weight_bits);
  return rep;
}

}  // namespace onrx

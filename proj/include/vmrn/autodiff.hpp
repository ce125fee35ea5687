#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vmrn/tensor.hpp"

namespace vmrn::ad {

struct Node;

/// Handle to a node of the reverse-mode graph. Values are written once at
/// construction; grads are filled by backward().
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  int64_t seq = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
};

/// Wraps a tensor as a graph leaf.
Var leaf(Tensor value, bool requires_grad = false);

/// Leaf that accumulates gradients (model parameters).
inline Var param(Tensor value) { return leaf(std::move(value), true); }

/// Reverse pass from a scalar root. Grads of every node reachable from the
/// root are zeroed first, so back-to-back calls on overlapping graphs do not
/// mix contributions. Accumulation order is fixed by node creation order.
void backward(const Var& root);

// ---- differentiable ops ----------------------------------------------------

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);

/// Sum of all elements as a scalar.
Var sum(const Var& a);

/// Inner product with a constant weight tensor, as a scalar.
Var weighted_sum(const Var& a, Tensor weights);

/// Cross-correlation, NCHW. kernel is [Cout, Cin, kh, kw], bias [Cout].
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int64_t stride, int64_t pad);

/// x [N, In] * w [In, Out] + b [Out].
Var linear(const Var& x, const Var& w, const Var& b);

Var relu(const Var& x);

/// Max pooling with square kernel and equal stride, NCHW.
Var maxpool2d(const Var& x, int64_t kernel, int64_t stride);

/// Adaptive max pooling to out_h x out_w. Bin (r, c) covers input rows
/// [floor(r*h/H), ceil((r+1)*h/H)) and the analogous columns, so the bins
/// always tile the whole input. Accepts [C, h, w] or [N, C, h, w].
Var adaptive_maxpool2d(const Var& x, int64_t out_h, int64_t out_w);

/// Spatial window [r0, r1) x [c0, c1) of a [C, h, w] tensor.
Var crop2d(const Var& x, int64_t r0, int64_t r1, int64_t c0, int64_t c1);

/// Image n of a [N, C, H, W] batch as a [C, H, W] view.
Var slice_image(const Var& x, int64_t n);

/// Concatenates [Ci, H, W] tensors along channels.
Var concat_channels(const std::vector<Var>& xs);

/// Stacks P tensors of identical shape [C, H, W] into [P, C, H, W].
Var stack(const std::vector<Var>& xs);

Var reshape(const Var& x, std::vector<int64_t> shape);

/// Row gather: x [N, F] indexed by idx (repeats allowed) -> [M, F].
Var rows(const Var& x, std::vector<int64_t> idx);

/// Detector-head layout change: [N, K*F, h, w] -> [N*h*w*K, F], i.e. one row
/// of F fields per (image, cell, anchor k), cells in row-major order.
Var cell_major(const Var& x, int64_t k_per_cell, int64_t fields);

/// Sum of softmax cross entropies over all rows of logits [N, K] against
/// integer targets (length N). Stabilized by max subtraction.
Var softmax_ce_sum(const Var& logits, std::vector<int64_t> targets);

/// Summed smooth L1 (Huber at delta 1) between pred and a constant target.
Var smooth_l1_sum(const Var& pred, Tensor target);

// ---- value-level helpers (no graph) ----------------------------------------

/// Row-wise softmax of a [N, K] tensor.
Tensor softmax_rows(const Tensor& logits);

// ---- finite-difference checking ---------------------------------------------

using GraphFn = std::function<Var(const std::vector<Var>&)>;

/// Central finite differences against the analytic gradient, elementwise.
/// Returns the max relative error max(|a-n| / max(|a|, |n|, 1e-6)). The
/// function must be pure and differentiable at the inputs; callers keep the
/// inputs away from ReLU / max / smooth-L1 kinks by at least ~10*eps.
double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace vmrn::ad

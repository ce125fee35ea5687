#include "vmrn/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace vmrn::ad {

namespace {

std::atomic<int64_t> g_seq{0};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  n->seq = ++g_seq;
  for (const Var& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

void ensure_grad(Node& n) {
  if (n.grad.same_shape(n.value)) {
    std::fill(n.grad.vec().begin(), n.grad.vec().end(), 0.0);
  } else {
    n.grad = Tensor(n.value.shape());
  }
}

// start of pooling bin r out of H over an extent of h
inline int64_t bin_start(int64_t r, int64_t h, int64_t H) { return (r * h) / H; }
inline int64_t bin_end(int64_t r, int64_t h, int64_t H) { return ((r + 1) * h + H - 1) / H; }

void im2col(const double* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t oh, int64_t ow, double* col) {
  const int64_t m = oh * ow;
  for (int64_t c = 0; c < cin; ++c) {
    const double* xc = x + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        double* row = col + ((c * kh + ki) * kw + kj) * m;
        for (int64_t r = 0; r < oh; ++r) {
          const int64_t ir = r * stride - pad + ki;
          if (ir < 0 || ir >= h) {
            std::fill(row + r * ow, row + (r + 1) * ow, 0.0);
            continue;
          }
          for (int64_t cc = 0; cc < ow; ++cc) {
            const int64_t ic = cc * stride - pad + kj;
            row[r * ow + cc] = (ic < 0 || ic >= w) ? 0.0 : xc[ir * w + ic];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t oh, int64_t ow, double* dx) {
  const int64_t m = oh * ow;
  for (int64_t c = 0; c < cin; ++c) {
    double* dxc = dx + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const double* row = col + ((c * kh + ki) * kw + kj) * m;
        for (int64_t r = 0; r < oh; ++r) {
          const int64_t ir = r * stride - pad + ki;
          if (ir < 0 || ir >= h) continue;
          for (int64_t cc = 0; cc < ow; ++cc) {
            const int64_t ic = cc * stride - pad + kj;
            if (ic >= 0 && ic < w) dxc[ir * w + ic] += row[r * ow + cc];
          }
        }
      }
    }
  }
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = ++g_seq;
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_string(root->value.shape()));
  }
  // Collect the reachable subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const Var& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  for (Node* n : order) {
    if (n->requires_grad || n == root.get()) ensure_grad(*n);
  }
  root->grad = Tensor(root->value.shape());
  root->grad[0] = 1.0;

  for (Node* n : order) {
    if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (int p = 0; p < 2; ++p) {
      Node& parent = *n.parents[p];
      if (!parent.requires_grad) continue;
      for (int64_t i = 0; i < n.grad.numel(); ++i) parent.grad[i] += n.grad[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = c * a->value[i];
  return make_node(std::move(out), {a}, [c](Node& n) {
    Node& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < n.grad.numel(); ++i) parent.grad[i] += c * n.grad[i];
  });
}

Var add_const(const Var& a, double c) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + c;
  return make_node(std::move(out), {a}, [](Node& n) {
    Node& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < n.grad.numel(); ++i) parent.grad[i] += n.grad[i];
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) total += a->value[i];
  return make_node(Tensor::scalar(total), {a}, [](Node& n) {
    Node& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    const double g = n.grad[0];
    for (int64_t i = 0; i < parent.grad.numel(); ++i) parent.grad[i] += g;
  });
}

Var weighted_sum(const Var& a, Tensor weights) {
  check_same_shape(a->value, weights, "weighted_sum");
  double total = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) total += a->value[i] * weights[i];
  auto w = std::make_shared<Tensor>(std::move(weights));
  return make_node(Tensor::scalar(total), {a}, [w](Node& n) {
    Node& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    const double g = n.grad[0];
    for (int64_t i = 0; i < w->numel(); ++i) parent.grad[i] += g * (*w)[i];
  });
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int64_t stride, int64_t pad) {
  const Tensor& xv = x->value;
  const Tensor& kv = kernel->value;
  if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1)) {
    throw ShapeError("conv2d: input " + shape_string(xv.shape()) + " incompatible with kernel " +
                     shape_string(kv.shape()));
  }
  const int64_t n_batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int64_t cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (bias->value.numel() != cout) {
    throw ShapeError("conv2d: bias " + shape_string(bias->value.shape()) + " does not match kernel " +
                     shape_string(kv.shape()));
  }
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: input " + shape_string(xv.shape()) + " too small for kernel " +
                     shape_string(kv.shape()) + " at stride " + std::to_string(stride));
  }
  const int64_t k_dim = cin * kh * kw, m = oh * ow;

  // im2col buffers are kept for the backward GEMMs.
  auto cols = std::make_shared<std::vector<double>>(n_batch * k_dim * m);
  Tensor out({n_batch, cout, oh, ow});
  MapConstMat wmat(kv.data(), cout, k_dim);
  for (int64_t n = 0; n < n_batch; ++n) {
    double* col = cols->data() + n * k_dim * m;
    im2col(xv.data() + n * cin * h * w, cin, h, w, kh, kw, stride, pad, oh, ow, col);
    MapMat omat(out.data() + n * cout * m, cout, m);
    omat.noalias() = wmat * MapConstMat(col, k_dim, m);
    for (int64_t c = 0; c < cout; ++c) omat.row(c).array() += bias->value[c];
  }

  auto fn = [cols, stride, pad, cin, h, w, kh, kw, oh, ow](Node& n) {
    Node& xn = *n.parents[0];
    Node& kn = *n.parents[1];
    Node& bn = *n.parents[2];
    const int64_t n_batch = n.value.dim(0), cout = n.value.dim(1);
    const int64_t k_dim = cin * kh * kw, m = oh * ow;
    std::vector<double> dcol(xn.requires_grad ? k_dim * m : 0);
    for (int64_t b = 0; b < n_batch; ++b) {
      MapConstMat dout(n.grad.data() + b * cout * m, cout, m);
      const double* col = cols->data() + b * k_dim * m;
      if (kn.requires_grad) {
        MapMat dw(kn.grad.data(), cout, k_dim);
        dw.noalias() += dout * MapConstMat(col, k_dim, m).transpose();
      }
      if (bn.requires_grad) {
        for (int64_t c = 0; c < cout; ++c) bn.grad[c] += dout.row(c).sum();
      }
      if (xn.requires_grad) {
        MapMat dc(dcol.data(), k_dim, m);
        dc.noalias() = MapConstMat(kn.value.data(), cout, k_dim).transpose() * dout;
        col2im_add(dcol.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                   xn.grad.data() + b * cin * h * w);
      }
    }
  };
  return make_node(std::move(out), {x, kernel, bias}, std::move(fn));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + " incompatible with weight " +
                     shape_string(wv.shape()));
  }
  const int64_t n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(1);
  if (b->value.numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_string(b->value.shape()) + " does not match weight " +
                     shape_string(wv.shape()));
  }
  Tensor out({n, out_dim});
  MapMat(out.data(), n, out_dim).noalias() =
      MapConstMat(xv.data(), n, in) * MapConstMat(wv.data(), in, out_dim);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += b->value[c];

  auto fn = [n, in, out_dim](Node& nd) {
    Node& xn = *nd.parents[0];
    Node& wn = *nd.parents[1];
    Node& bn = *nd.parents[2];
    MapConstMat dout(nd.grad.data(), n, out_dim);
    if (xn.requires_grad) {
      MapMat(xn.grad.data(), n, in).noalias() +=
          dout * MapConstMat(wn.value.data(), in, out_dim).transpose();
    }
    if (wn.requires_grad) {
      MapMat(wn.grad.data(), in, out_dim).noalias() +=
          MapConstMat(xn.value.data(), n, in).transpose() * dout;
    }
    if (bn.requires_grad) {
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < out_dim; ++c) bn.grad[c] += nd.grad[r * out_dim + c];
    }
  };
  return make_node(std::move(out), {x, w, b}, std::move(fn));
}

Var relu(const Var& x) {
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
  return make_node(std::move(out), {x}, [](Node& n) {
    Node& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (parent.value[i] > 0.0) parent.grad[i] += n.grad[i];
  });
}

Var maxpool2d(const Var& x, int64_t kernel, int64_t stride) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw ShapeError("maxpool2d: expected NCHW, got " + shape_string(xv.shape()));
  const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int64_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  if (oh < 1 || ow < 1) {
    throw ShapeError("maxpool2d: input " + shape_string(xv.shape()) + " smaller than kernel " +
                     std::to_string(kernel));
  }
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
  int64_t o = 0;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = xv.data() + (b * c + ch) * h * w;
      const int64_t base = (b * c + ch) * h * w;
      for (int64_t r = 0; r < oh; ++r) {
        for (int64_t cc = 0; cc < ow; ++cc, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int64_t ki = 0; ki < kernel; ++ki) {
            for (int64_t kj = 0; kj < kernel; ++kj) {
              const int64_t idx = (r * stride + ki) * w + cc * stride + kj;
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = base + idx;
              }
            }
          }
          out[o] = best;
          (*argmax)[o] = best_idx;
        }
      }
    }
  }
  return make_node(std::move(out), {x}, [argmax](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) parent.grad[(*argmax)[i]] += nd.grad[i];
  });
}

Var adaptive_maxpool2d(const Var& x, int64_t out_h, int64_t out_w) {
  const Tensor& xv = x->value;
  const bool batched = xv.rank() == 4;
  if (!batched && xv.rank() != 3) {
    throw ShapeError("adaptive_maxpool2d: expected [C,h,w] or [N,C,h,w], got " +
                     shape_string(xv.shape()));
  }
  const int64_t n = batched ? xv.dim(0) : 1;
  const int64_t c = xv.dim(batched ? 1 : 0), h = xv.dim(batched ? 2 : 1), w = xv.dim(batched ? 3 : 2);
  if (xv.numel() == 0 || h < 1 || w < 1) {
    throw InvalidInput("adaptive_maxpool2d: empty input " + shape_string(xv.shape()));
  }
  if (out_h < 1 || out_w < 1) throw InvalidInput("adaptive_maxpool2d: output size must be positive");

  Tensor out(batched ? std::vector<int64_t>{n, c, out_h, out_w}
                     : std::vector<int64_t>{c, out_h, out_w});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
  int64_t o = 0;
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const double* src = xv.data() + plane * h * w;
    const int64_t base = plane * h * w;
    for (int64_t r = 0; r < out_h; ++r) {
      const int64_t r0 = bin_start(r, h, out_h), r1 = bin_end(r, h, out_h);
      for (int64_t cc = 0; cc < out_w; ++cc, ++o) {
        const int64_t c0 = bin_start(cc, w, out_w), c1 = bin_end(cc, w, out_w);
        double best = -std::numeric_limits<double>::infinity();
        int64_t best_idx = -1;
        for (int64_t i = r0; i < r1; ++i) {
          for (int64_t j = c0; j < c1; ++j) {
            if (src[i * w + j] > best) {
              best = src[i * w + j];
              best_idx = base + i * w + j;
            }
          }
        }
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  return make_node(std::move(out), {x}, [argmax](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) parent.grad[(*argmax)[i]] += nd.grad[i];
  });
}

Var crop2d(const Var& x, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw ShapeError("crop2d: expected [C,h,w], got " + shape_string(xv.shape()));
  const int64_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (r0 < 0 || c0 < 0 || r1 > h || c1 > w || r0 >= r1 || c0 >= c1) {
    throw InvalidInput("crop2d: window [" + std::to_string(r0) + "," + std::to_string(r1) + ")x[" +
                       std::to_string(c0) + "," + std::to_string(c1) + ") invalid for " +
                       shape_string(xv.shape()));
  }
  const int64_t ch = r1 - r0, cw = c1 - c0;
  Tensor out({c, ch, cw});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t r = 0; r < ch; ++r)
      for (int64_t cc = 0; cc < cw; ++cc)
        out[(ci * ch + r) * cw + cc] = xv[(ci * h + r0 + r) * w + c0 + cc];

  auto fn = [c, h, w, r0, c0, ch, cw](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t r = 0; r < ch; ++r)
        for (int64_t cc = 0; cc < cw; ++cc)
          parent.grad[(ci * h + r0 + r) * w + c0 + cc] += nd.grad[(ci * ch + r) * cw + cc];
  };
  return make_node(std::move(out), {x}, std::move(fn));
}

Var slice_image(const Var& x, int64_t n) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw ShapeError("slice_image: expected NCHW, got " + shape_string(xv.shape()));
  if (n < 0 || n >= xv.dim(0)) throw InvalidInput("slice_image: index out of range");
  const int64_t plane = xv.dim(1) * xv.dim(2) * xv.dim(3);
  Tensor out({xv.dim(1), xv.dim(2), xv.dim(3)});
  std::copy(xv.data() + n * plane, xv.data() + (n + 1) * plane, out.data());
  return make_node(std::move(out), {x}, [n, plane](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < plane; ++i) parent.grad[n * plane + i] += nd.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvalidInput("concat_channels: empty input list");
  const int64_t h = xs[0]->value.dim(1), w = xs[0]->value.dim(2);
  int64_t total_c = 0;
  for (const Var& x : xs) {
    if (x->value.rank() != 3 || x->value.dim(1) != h || x->value.dim(2) != w) {
      throw ShapeError("concat_channels: shape " + shape_string(x->value.shape()) +
                       " incompatible with " + shape_string(xs[0]->value.shape()));
    }
    total_c += x->value.dim(0);
  }
  Tensor out({total_c, h, w});
  int64_t offset = 0;
  for (const Var& x : xs) {
    std::copy(x->value.data(), x->value.data() + x->value.numel(), out.data() + offset);
    offset += x->value.numel();
  }
  auto fn = [](Node& nd) {
    int64_t offset = 0;
    for (const Var& p : nd.parents) {
      const int64_t len = p->value.numel();
      if (p->requires_grad) {
        for (int64_t i = 0; i < len; ++i) p->grad[i] += nd.grad[offset + i];
      }
      offset += len;
    }
  };
  return make_node(std::move(out), xs, std::move(fn));
}

Var stack(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvalidInput("stack: empty input list");
  const auto& shape0 = xs[0]->value.shape();
  for (const Var& x : xs) check_same_shape(x->value, xs[0]->value, "stack");
  std::vector<int64_t> out_shape{static_cast<int64_t>(xs.size())};
  out_shape.insert(out_shape.end(), shape0.begin(), shape0.end());
  Tensor out(out_shape);
  const int64_t len = xs[0]->value.numel();
  for (size_t i = 0; i < xs.size(); ++i) {
    std::copy(xs[i]->value.data(), xs[i]->value.data() + len, out.data() + i * len);
  }
  auto fn = [len](Node& nd) {
    for (size_t p = 0; p < nd.parents.size(); ++p) {
      Node& parent = *nd.parents[p];
      if (!parent.requires_grad) continue;
      for (int64_t i = 0; i < len; ++i) parent.grad[i] += nd.grad[p * len + i];
    }
  };
  return make_node(std::move(out), xs, std::move(fn));
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
  Tensor out(std::move(shape), x->value.vec());
  if (out.numel() != x->value.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x->value.shape()) + " as " +
                     shape_string(out.shape()));
  }
  return make_node(std::move(out), {x}, [](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) parent.grad[i] += nd.grad[i];
  });
}

Var rows(const Var& x, std::vector<int64_t> idx) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2) throw ShapeError("rows: expected [N,F], got " + shape_string(xv.shape()));
  const int64_t f = xv.dim(1);
  for (int64_t i : idx) {
    if (i < 0 || i >= xv.dim(0)) throw InvalidInput("rows: index " + std::to_string(i) + " out of range");
  }
  Tensor out({static_cast<int64_t>(idx.size()), f});
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy(xv.data() + idx[r] * f, xv.data() + (idx[r] + 1) * f, out.data() + r * f);
  }
  auto fn = [idx = std::move(idx), f](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t c = 0; c < f; ++c) parent.grad[idx[r] * f + c] += nd.grad[r * f + c];
  };
  return make_node(std::move(out), {x}, std::move(fn));
}

Var cell_major(const Var& x, int64_t k_per_cell, int64_t fields) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4 || xv.dim(1) != k_per_cell * fields) {
    throw ShapeError("cell_major: input " + shape_string(xv.shape()) + " does not hold " +
                     std::to_string(k_per_cell) + "*" + std::to_string(fields) + " channels");
  }
  const int64_t n = xv.dim(0), h = xv.dim(2), w = xv.dim(3);
  const int64_t boxes = h * w * k_per_cell;
  Tensor out({n * boxes, fields});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c)
        for (int64_t k = 0; k < k_per_cell; ++k)
          for (int64_t f = 0; f < fields; ++f)
            out[(b * boxes + (r * w + c) * k_per_cell + k) * fields + f] =
                xv[((b * k_per_cell * fields + k * fields + f) * h + r) * w + c];

  auto fn = [k_per_cell, fields, n, h, w, boxes](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    for (int64_t b = 0; b < n; ++b)
      for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c)
          for (int64_t k = 0; k < k_per_cell; ++k)
            for (int64_t f = 0; f < fields; ++f)
              parent.grad[((b * k_per_cell * fields + k * fields + f) * h + r) * w + c] +=
                  nd.grad[(b * boxes + (r * w + c) * k_per_cell + k) * fields + f];
  };
  return make_node(std::move(out), {x}, std::move(fn));
}

Var softmax_ce_sum(const Var& logits, std::vector<int64_t> targets) {
  const Tensor& lv = logits->value;
  if (lv.rank() != 2) throw ShapeError("softmax_ce_sum: expected [N,K], got " + shape_string(lv.shape()));
  const int64_t n = lv.dim(0), k = lv.dim(1);
  if (static_cast<int64_t>(targets.size()) != n) {
    throw ShapeError("softmax_ce_sum: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  for (int64_t t : targets) {
    if (t < 0 || t >= k) throw InvalidInput("softmax_ce_sum: target " + std::to_string(t) + " out of range");
  }
  auto probs = std::make_shared<Tensor>(softmax_rows(lv));
  double loss = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    double m = lv[r * k];
    for (int64_t c = 1; c < k; ++c) m = std::max(m, lv[r * k + c]);
    double lse = 0.0;
    for (int64_t c = 0; c < k; ++c) lse += std::exp(lv[r * k + c] - m);
    loss += m + std::log(lse) - lv[r * k + targets[r]];
  }
  auto fn = [probs, targets = std::move(targets), n, k](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    const double g = nd.grad[0];
    for (int64_t r = 0; r < n; ++r) {
      for (int64_t c = 0; c < k; ++c) {
        parent.grad[r * k + c] += g * ((*probs)[r * k + c] - (c == targets[r] ? 1.0 : 0.0));
      }
    }
  };
  return make_node(Tensor::scalar(loss), {logits}, std::move(fn));
}

Var smooth_l1_sum(const Var& pred, Tensor target) {
  check_same_shape(pred->value, target, "smooth_l1_sum");
  double loss = 0.0;
  for (int64_t i = 0; i < target.numel(); ++i) {
    const double d = pred->value[i] - target[i];
    loss += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  auto tgt = std::make_shared<Tensor>(std::move(target));
  auto fn = [tgt](Node& nd) {
    Node& parent = *nd.parents[0];
    if (!parent.requires_grad) return;
    const double g = nd.grad[0];
    for (int64_t i = 0; i < tgt->numel(); ++i) {
      const double d = parent.value[i] - (*tgt)[i];
      parent.grad[i] += g * std::clamp(d, -1.0, 1.0);
    }
  };
  return make_node(Tensor::scalar(loss), {pred}, std::move(fn));
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: expected [N,K], got " + shape_string(logits.shape()));
  const int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (int64_t r = 0; r < n; ++r) {
    double m = logits[r * k];
    for (int64_t c = 1; c < k; ++c) m = std::max(m, logits[r * k + c]);
    double sum = 0.0;
    for (int64_t c = 0; c < k; ++c) {
      out[r * k + c] = std::exp(logits[r * k + c] - m);
      sum += out[r * k + c];
    }
    for (int64_t c = 0; c < k; ++c) out[r * k + c] /= sum;
  }
  return out;
}

double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double eps) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(leaf(t, true));
  Var y = f(leaves);
  if (y->value.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  backward(y);

  double max_rel = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t e = 0; e < inputs[i].numel(); ++e) {
      std::vector<Var> probe;
      probe.reserve(inputs.size());
      for (const Tensor& t : inputs) probe.push_back(leaf(t, false));
      probe[i]->value[e] = inputs[i][e] + eps;
      const double f_plus = f(probe)->value[0];

      probe.clear();
      for (const Tensor& t : inputs) probe.push_back(leaf(t, false));
      probe[i]->value[e] = inputs[i][e] - eps;
      const double f_minus = f(probe)->value[0];

      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double analytic = leaves[i]->grad[e];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
  }
  return max_rel;
}

}  // namespace vmrn::ad

#include "vmrn/gradcheck.hpp"

#include <functional>

#include "vmrn/autodiff.hpp"
#include "vmrn/op2l.hpp"
#include "vmrn/relhead.hpp"
#include "vmrn/rng.hpp"

namespace vmrn::ad {

namespace {

Tensor uniform(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// magnitudes in [0.15, 1]: clear of ReLU/max/smooth-L1 kinks at eps 1e-5
Tensor margined(Rng& rng, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = rng.uniform(0.15, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  }
  return t;
}

struct LayerSpec {
  const char* name;
  std::function<double(Rng&)> one_seed;  // returns max relative error
};

const std::vector<LayerSpec>& layer_table() {
  static const std::vector<LayerSpec> table = {
      {"linear",
       [](Rng& rng) {
         return grad_check(
             [](const std::vector<Var>& in) { return sum(linear(in[0], in[1], in[2])); },
             {uniform(rng, {3, 6}), uniform(rng, {6, 4}), uniform(rng, {4})});
       }},
      {"relu",
       [](Rng& rng) {
         return grad_check([](const std::vector<Var>& in) { return sum(relu(in[0])); },
                           {margined(rng, {2, 3, 5, 5})});
       }},
      {"conv2d",
       [](Rng& rng) {
         return grad_check(
             [](const std::vector<Var>& in) { return sum(conv2d(in[0], in[1], in[2], 1, 1)); },
             {uniform(rng, {1, 3, 8, 8}), uniform(rng, {4, 3, 3, 3}), uniform(rng, {4})});
       }},
      {"maxpool2d",
       [](Rng& rng) {
         return grad_check([](const std::vector<Var>& in) { return sum(maxpool2d(in[0], 2, 2)); },
                           {margined(rng, {1, 2, 6, 6})});
       }},
      {"adaptive_maxpool",
       [](Rng& rng) {
         return grad_check(
             [](const std::vector<Var>& in) { return sum(adaptive_maxpool2d(in[0], 3, 3)); },
             {uniform(rng, {2, 7, 5})});
       }},
      {"softmax_cross_entropy",
       [](Rng& rng) {
         return grad_check(
             [](const std::vector<Var>& in) { return softmax_ce_sum(in[0], {1, 0, 2}); },
             {uniform(rng, {3, 4}, -2.0, 2.0)});
       }},
      {"smooth_l1",
       [](Rng& rng) {
         // diffs away from both the 0 and the |d| = 1 kinks
         Tensor pred({8});
         for (int64_t i = 0; i < 8; ++i) {
           const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
           pred[i] = sign * (i < 5 ? rng.uniform(0.1, 0.8) : rng.uniform(1.2, 2.5));
         }
         return grad_check(
             [](const std::vector<Var>& in) { return smooth_l1_sum(in[0], Tensor({8})); }, {pred});
       }},
      {"op2l",
       [](Rng& rng) {
         std::vector<BBox> boxes;
         for (int i = 0; i < 2; ++i) {
           const double w = rng.uniform(8.0, 40.0), h = rng.uniform(8.0, 40.0);
           const double x0 = rng.uniform(0.0, 64.0 - w), y0 = rng.uniform(0.0, 64.0 - h);
           boxes.push_back(BBox{x0, y0, x0 + w, y0 + h});
         }
         const auto pairs = op2l::enumerate_pairs(boxes);
         Tensor w({static_cast<int64_t>(pairs.size()), 6, 7, 7});
         for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
         return grad_check(
             [&](const std::vector<Var>& in) {
               return weighted_sum(op2l::assemble_batch(in[0], pairs, 64.0, 7).features, w);
             },
             {uniform(rng, {2, 8, 8})});
       }},
      {"relation_head",
       [](Rng& rng) {
         // pair features and all head weights checked together
         const int64_t c = 2, hw = 5, hidden = 6;
         return grad_check(
             [&](const std::vector<Var>& in) {
               rel::RelHeadParams head{in[1], in[2], in[3], in[4], in[5], in[6]};
               return softmax_ce_sum(rel::forward_logits(head, in[0]), {2, 0});
             },
             {uniform(rng, {2, 3 * c, hw, hw}), uniform(rng, {c, 3 * c, 3, 3}), uniform(rng, {c}),
              uniform(rng, {c * hw * hw, hidden}), uniform(rng, {hidden}),
              uniform(rng, {hidden, 3}), uniform(rng, {3})});
       }},
  };
  return table;
}

}  // namespace

std::vector<std::string> gradient_check_layers() {
  std::vector<std::string> names;
  for (const auto& spec : layer_table()) names.emplace_back(spec.name);
  return names;
}

std::vector<LayerCheck> run_gradient_checks(const std::string& layer_filter, int seeds) {
  std::vector<LayerCheck> results;
  bool matched = false;
  Rng rng(20240);
  for (const auto& spec : layer_table()) {
    if (!layer_filter.empty() && layer_filter != spec.name) continue;
    matched = true;
    LayerCheck check;
    check.layer = spec.name;
    check.seeds = seeds;
    for (int s = 0; s < seeds; ++s) {
      check.max_rel_error = std::max(check.max_rel_error, spec.one_seed(rng));
    }
    results.push_back(std::move(check));
  }
  if (!layer_filter.empty() && !matched) {
    throw InvalidInput("gradcheck: unknown layer '" + layer_filter + "'");
  }
  return results;
}

}  // namespace vmrn::ad

#pragma once

#include <vector>

#include "vmrn/autodiff.hpp"
#include "vmrn/geometry.hpp"

namespace vmrn::op2l {

/// Ordered object pair (subject, object) plus the union of their boxes.
struct ObjectPair {
  int subject_index = 0;
  int object_index = 0;
  BBox subject;
  BBox object;
  BBox union_box;
};

/// All n(n-1) ordered pairs in deterministic order: subject index ascending,
/// then object index ascending, skipping i == j.
std::vector<ObjectPair> enumerate_pairs(const std::vector<BBox>& boxes);

/// Feature-map window of an image-space box: start = floor(x * f / image),
/// end = max(start + 1, ceil(x' * f / image)), never empty. The box is
/// clipped to the image first; a box entirely outside is an error.
struct CropWindow {
  int64_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
};
CropWindow project_box(const BBox& box, double image_size, int64_t feat_h, int64_t feat_w);

/// Crops the box's window from a [C, h, w] feature map and adaptively
/// max-pools it to [C, out_hw, out_hw].
ad::Var crop_pool(const ad::Var& features, const BBox& box, double image_size, int64_t out_hw);

/// The relation mini-batch for one image: per pair, subject, object and
/// union crops channel-concatenated into [3C, H, W] and stacked to
/// [P, 3C, H, W]. Crops of a box shared between pairs are computed once, so
/// their backward gradients accumulate on the shared feature map.
struct PairBatch {
  ad::Var features;  // [P, 3C, H, W]
  std::vector<ObjectPair> pairs;
};
PairBatch assemble_batch(const ad::Var& features, const std::vector<ObjectPair>& pairs,
                         double image_size, int64_t out_hw);

/// Gradient of the assembled batch with respect to the shared feature map:
/// runs the real crop/pool/concat backward with pair_grads [P, 3C, H, W] as
/// the upstream gradient and returns the accumulated [C, h, w] result.
Tensor accumulate_gradients(const Tensor& features, const std::vector<ObjectPair>& pairs,
                            double image_size, int64_t out_hw, const Tensor& pair_grads);

}  // namespace vmrn::op2l

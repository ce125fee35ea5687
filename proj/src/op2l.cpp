#include "vmrn/op2l.hpp"

#include <cmath>
#include <map>

namespace vmrn::op2l {

std::vector<ObjectPair> enumerate_pairs(const std::vector<BBox>& boxes) {
  for (const BBox& b : boxes) check_box(b, "enumerate_pairs: box");
  std::vector<ObjectPair> pairs;
  const int n = static_cast<int>(boxes.size());
  pairs.reserve(static_cast<size_t>(n) * (n > 0 ? n - 1 : 0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      pairs.push_back(ObjectPair{i, j, boxes[i], boxes[j], union_box(boxes[i], boxes[j])});
    }
  }
  return pairs;
}

CropWindow project_box(const BBox& box, double image_size, int64_t feat_h, int64_t feat_w) {
  check_box(box, "project_box: box");
  const BBox clipped = clip_box(box, image_size, image_size);
  if (!clipped.valid()) {
    throw InvalidInput("project_box: box " + to_string(box) + " lies outside the image");
  }
  CropWindow win;
  win.r0 = static_cast<int64_t>(std::floor(clipped.y_min * static_cast<double>(feat_h) / image_size));
  win.c0 = static_cast<int64_t>(std::floor(clipped.x_min * static_cast<double>(feat_w) / image_size));
  win.r1 = std::min<int64_t>(
      feat_h, std::max(win.r0 + 1, static_cast<int64_t>(std::ceil(
                                       clipped.y_max * static_cast<double>(feat_h) / image_size))));
  win.c1 = std::min<int64_t>(
      feat_w, std::max(win.c0 + 1, static_cast<int64_t>(std::ceil(
                                       clipped.x_max * static_cast<double>(feat_w) / image_size))));
  return win;
}

ad::Var crop_pool(const ad::Var& features, const BBox& box, double image_size, int64_t out_hw) {
  const Tensor& f = features->value;
  if (f.rank() != 3) {
    throw ShapeError("crop_pool: expected [C, h, w] features, got " + shape_string(f.shape()));
  }
  const CropWindow win = project_box(box, image_size, f.dim(1), f.dim(2));
  return ad::adaptive_maxpool2d(ad::crop2d(features, win.r0, win.r1, win.c0, win.c1), out_hw, out_hw);
}

PairBatch assemble_batch(const ad::Var& features, const std::vector<ObjectPair>& pairs,
                         double image_size, int64_t out_hw) {
  if (pairs.empty()) throw InvalidInput("assemble_batch: no pairs");

  // One crop per distinct box: shared crops make the backward accumulate.
  std::map<int, ad::Var> box_crop;
  std::map<std::pair<int, int>, ad::Var> union_crop;
  auto crop_of = [&](int index, const BBox& box) {
    auto it = box_crop.find(index);
    if (it == box_crop.end()) {
      it = box_crop.emplace(index, crop_pool(features, box, image_size, out_hw)).first;
    }
    return it->second;
  };

  std::vector<ad::Var> rows;
  rows.reserve(pairs.size());
  for (const ObjectPair& p : pairs) {
    const auto key = std::minmax(p.subject_index, p.object_index);
    auto it = union_crop.find(key);
    if (it == union_crop.end()) {
      it = union_crop.emplace(key, crop_pool(features, p.union_box, image_size, out_hw)).first;
    }
    rows.push_back(ad::concat_channels(
        {crop_of(p.subject_index, p.subject), crop_of(p.object_index, p.object), it->second}));
  }
  return PairBatch{ad::stack(rows), pairs};
}

Tensor accumulate_gradients(const Tensor& features, const std::vector<ObjectPair>& pairs,
                            double image_size, int64_t out_hw, const Tensor& pair_grads) {
  ad::Var leaf_features = ad::leaf(features, true);
  PairBatch batch = assemble_batch(leaf_features, pairs, image_size, out_hw);
  check_same_shape(batch.features->value, pair_grads, "accumulate_gradients");
  ad::backward(ad::weighted_sum(batch.features, pair_grads));
  return leaf_features->grad;
}

}  // namespace vmrn::op2l

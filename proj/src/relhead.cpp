#include "vmrn/relhead.hpp"

#include <algorithm>
#include <cmath>

namespace vmrn::rel {

ad::Var forward_logits(const RelHeadParams& params, const ad::Var& pair_features) {
  const Tensor& f = pair_features->value;
  if (f.rank() != 4) {
    throw ShapeError("rel head: expected [P, 3C, H, W], got " + shape_string(f.shape()));
  }
  auto h = ad::relu(ad::conv2d(pair_features, params.conv_w, params.conv_b, 1, 1));
  const int64_t flat = h->value.dim(1) * h->value.dim(2) * h->value.dim(3);
  auto flatv = ad::reshape(h, {f.dim(0), flat});
  auto hidden = ad::relu(ad::linear(flatv, params.fc1_w, params.fc1_b));
  return ad::linear(hidden, params.fc2_w, params.fc2_b);
}

Tensor predict_probs(const RelHeadParams& params, const ad::Var& pair_features) {
  return ad::softmax_rows(forward_logits(params, pair_features)->value);
}

double rel_loss(const tree::Prob3& probs, tree::RelationLabel label) {
  return -std::log(probs[static_cast<size_t>(tree::label_index(label))]);
}

double image_rel_loss(std::span<const double> online_losses, std::span<const double> offline_losses,
                      double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw InvalidInput("image_rel_loss: lambda must be in [0, 1]");
  double on = 0.0, off = 0.0;
  for (double v : online_losses) on += v;
  for (double v : offline_losses) off += v;
  return lambda * on + (1.0 - lambda) * off;
}

std::vector<OnlineMatch> match_online(const std::vector<det::Detection>& detections,
                                      const data::SceneAnnotation& gt, double iou_threshold) {
  // best gt per detection (IoU ties -> lower node index)
  struct Claim {
    int det = -1;
    double overlap = 0.0;
  };
  std::vector<std::pair<int, double>> best_gt(detections.size(), {-1, 0.0});
  for (size_t d = 0; d < detections.size(); ++d) {
    for (const auto& obj : gt.objects) {
      const double v = iou(detections[d].box, obj.box);
      if (v > best_gt[d].second ||
          (v == best_gt[d].second && best_gt[d].first >= 0 && obj.node_index < best_gt[d].first)) {
        best_gt[d] = {obj.node_index, v};
      }
    }
  }

  // One detection per gt object: the highest overlap wins. Ties fall back to
  // box coordinates so the outcome is independent of detection order.
  std::map<int, Claim> claims;
  for (size_t d = 0; d < detections.size(); ++d) {
    const auto [node, overlap] = best_gt[d];
    if (node < 0 || overlap < iou_threshold) continue;
    auto it = claims.find(node);
    if (it == claims.end() || overlap > it->second.overlap ||
        (overlap == it->second.overlap &&
         detections[d].box < detections[it->second.det].box)) {
      claims[node] = Claim{static_cast<int>(d), overlap};
    }
  }

  std::vector<OnlineMatch> matches;
  for (const auto& [node, claim] : claims) matches.push_back({claim.det, node});
  std::sort(matches.begin(), matches.end(),
            [](const OnlineMatch& a, const OnlineMatch& b) {
              return a.detection_index < b.detection_index;
            });
  return matches;
}

std::vector<OnlineSample> assign_online_labels(const std::vector<det::Detection>& detections,
                                               const data::SceneAnnotation& gt,
                                               double iou_threshold) {
  const std::vector<OnlineMatch> matches = match_online(detections, gt, iou_threshold);
  if (matches.size() < 2) return {};
  const tree::PairwiseLabels labels = tree::tree_to_labels(gt.tree());

  std::vector<OnlineSample> samples;
  for (const OnlineMatch& a : matches) {
    for (const OnlineMatch& b : matches) {
      if (a.detection_index == b.detection_index) continue;
      samples.push_back(OnlineSample{a.detection_index, b.detection_index,
                                     labels.at({a.gt_node, b.gt_node})});
    }
  }
  return samples;
}

}  // namespace vmrn::rel

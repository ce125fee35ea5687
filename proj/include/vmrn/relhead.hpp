#pragma once

#include <span>
#include <vector>

#include "vmrn/autodiff.hpp"
#include "vmrn/dataio.hpp"
#include "vmrn/detector.hpp"
#include "vmrn/reltree.hpp"

namespace vmrn::rel {

/// Relationship predictor weights: a 3x3 conv mixing the subject/object/
/// union streams (3C -> C), then two fully connected layers down to the 3
/// relation logits.
struct RelHeadParams {
  ad::Var conv_w, conv_b;
  ad::Var fc1_w, fc1_b;
  ad::Var fc2_w, fc2_b;
};

/// Relation logits [P, 3] for a pair batch [P, 3C, H, W].
ad::Var forward_logits(const RelHeadParams& params, const ad::Var& pair_features);

/// Softmax probabilities [P, 3] (values only).
Tensor predict_probs(const RelHeadParams& params, const ad::Var& pair_features);

/// Cross entropy of one predicted distribution against its label.
double rel_loss(const tree::Prob3& probs, tree::RelationLabel label);

/// Per-image relation loss: lambda * sum(online) + (1 - lambda) * sum(offline).
double image_rel_loss(std::span<const double> online_losses, std::span<const double> offline_losses,
                      double lambda);

/// A detection admitted to online pairing, with the gt node it stands for.
struct OnlineMatch {
  int detection_index = 0;
  int gt_node = 0;
};

/// Matches detections to gt objects by maximum IoU. Detections whose best
/// overlap is below `iou_threshold` are dropped; when several detections
/// claim one gt object only the highest-IoU one stays (ties keep the lower
/// detection index, and IoU ties across gt go to the lower node index).
std::vector<OnlineMatch> match_online(const std::vector<det::Detection>& detections,
                                      const data::SceneAnnotation& gt, double iou_threshold = 0.5);

/// An ordered pair of admitted detections with its transferred gt label.
struct OnlineSample {
  int subject_detection = 0;
  int object_detection = 0;
  tree::RelationLabel label = tree::RelationLabel::kNoRel;
};

/// Online training labels: every ordered pair of admitted detections
/// inherits the gt label of its matched gt pair.
std::vector<OnlineSample> assign_online_labels(const std::vector<det::Detection>& detections,
                                               const data::SceneAnnotation& gt,
                                               double iou_threshold = 0.5);

}  // namespace vmrn::rel

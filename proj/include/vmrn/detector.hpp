#pragma once

#include <vector>

#include "vmrn/autodiff.hpp"
#include "vmrn/geometry.hpp"

namespace vmrn::det {

/// One detected object: box, argmax class, and the per-class probabilities
/// (real classes only, background excluded; entries need not sum to 1).
struct Detection {
  BBox box;
  int cls = 0;
  std::vector<double> conf;

  double score() const { return conf[static_cast<size_t>(cls)]; }
};

/// Layout of the default-box grid over one feature map.
struct DefaultBoxConfig {
  int64_t grid_h = 8;
  int64_t grid_w = 8;
  double image_size = 64.0;
  std::vector<double> scales = {0.22, 0.34, 0.5};
  std::vector<double> aspect_ratios = {1.0, 2.0, 0.5};

  int64_t boxes_per_cell() const {
    return static_cast<int64_t>(scales.size() * aspect_ratios.size());
  }
  int64_t count() const { return grid_h * grid_w * boxes_per_cell(); }
};

/// Centered boxes per cell in deterministic order: row-major cell, then
/// scale, then aspect ratio. Every box is clipped to the image.
std::vector<BBox> gen_default_boxes(const DefaultBoxConfig& cfg);

/// Per-default assignment: ground-truth object position, or -1 for
/// background. Every gt gets its best default (forced, globally greedy by
/// IoU); any other default joins the gt it overlaps by at least
/// `iou_threshold`.
std::vector<int> match_defaults(const std::vector<BBox>& defaults, const std::vector<BBox>& gt,
                                double iou_threshold = 0.5);

struct DetectionLoss {
  ad::Var loc;    // smooth L1 over positive offsets, normalized by positives
  ad::Var conf;   // cross entropy with 3:1 hard-negative mining, same norm
  ad::Var total;  // loc + alpha * conf
  int64_t positives = 0;
};

/// Loss for one image whose rows live at [row_offset, row_offset + D) of the
/// batched head outputs loc_all [N*D, 4] and conf_all [N*D, num_classes+1]
/// (background is the last class). Zero-positive images fall back to the
/// top-3 negatives with unit normalization.
DetectionLoss detection_loss(const ad::Var& loc_all, const ad::Var& conf_all, int64_t row_offset,
                             const std::vector<BBox>& defaults, const std::vector<BBox>& gt_boxes,
                             const std::vector<int>& gt_classes, const std::vector<int>& assignment,
                             int64_t num_classes, double alpha);

struct DecodeConfig {
  double conf_threshold = 0.5;
  double nms_iou = 0.45;
  int64_t max_detections = 10;
  double image_size = 64.0;
};

/// Decodes one image's raw outputs: per-default argmax class, confidence
/// filter, class-wise greedy NMS, then the top detections ordered by
/// descending score with coordinate tie-breaks.
std::vector<Detection> decode_detections(const Tensor& loc, const Tensor& conf_logits,
                                         const std::vector<BBox>& defaults, int64_t num_classes,
                                         const DecodeConfig& cfg);

}  // namespace vmrn::det

#include "vmrn/detector.hpp"

#include <algorithm>
#include <cmath>

namespace vmrn::det {

std::vector<BBox> gen_default_boxes(const DefaultBoxConfig& cfg) {
  if (cfg.grid_h < 1 || cfg.grid_w < 1) throw InvalidInput("default boxes: grid must be >= 1x1");
  std::vector<BBox> boxes;
  boxes.reserve(cfg.count());
  const double cell_h = cfg.image_size / static_cast<double>(cfg.grid_h);
  const double cell_w = cfg.image_size / static_cast<double>(cfg.grid_w);
  for (int64_t r = 0; r < cfg.grid_h; ++r) {
    for (int64_t c = 0; c < cfg.grid_w; ++c) {
      const double cy = (static_cast<double>(r) + 0.5) * cell_h;
      const double cx = (static_cast<double>(c) + 0.5) * cell_w;
      for (double scale : cfg.scales) {
        for (double ratio : cfg.aspect_ratios) {
          const double w = scale * cfg.image_size * std::sqrt(ratio);
          const double h = scale * cfg.image_size / std::sqrt(ratio);
          boxes.push_back(clip_box(BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h},
                                   cfg.image_size, cfg.image_size));
        }
      }
    }
  }
  return boxes;
}

std::vector<int> match_defaults(const std::vector<BBox>& defaults, const std::vector<BBox>& gt,
                                double iou_threshold) {
  std::vector<int> assignment(defaults.size(), -1);
  if (gt.empty()) return assignment;

  std::vector<std::vector<double>> overlap(gt.size(), std::vector<double>(defaults.size()));
  for (size_t g = 0; g < gt.size(); ++g) {
    for (size_t d = 0; d < defaults.size(); ++d) overlap[g][d] = iou(gt[g], defaults[d]);
  }

  // Forced matches: globally greedy, one default per gt.
  std::vector<bool> gt_matched(gt.size(), false);
  std::vector<bool> default_taken(defaults.size(), false);
  for (size_t round = 0; round < gt.size(); ++round) {
    int best_g = -1, best_d = -1;
    double best = -1.0;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (gt_matched[g]) continue;
      for (size_t d = 0; d < defaults.size(); ++d) {
        if (default_taken[d]) continue;
        if (overlap[g][d] > best) {
          best = overlap[g][d];
          best_g = static_cast<int>(g);
          best_d = static_cast<int>(d);
        }
      }
    }
    if (best_g < 0) break;
    gt_matched[best_g] = true;
    default_taken[best_d] = true;
    assignment[best_d] = best_g;
  }

  // Everything else joins its best gt when the overlap is good enough.
  for (size_t d = 0; d < defaults.size(); ++d) {
    if (assignment[d] >= 0) continue;
    int best_g = -1;
    double best = 0.0;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (overlap[g][d] > best) {
        best = overlap[g][d];
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= iou_threshold) assignment[d] = best_g;
  }
  return assignment;
}

DetectionLoss detection_loss(const ad::Var& loc_all, const ad::Var& conf_all, int64_t row_offset,
                             const std::vector<BBox>& defaults, const std::vector<BBox>& gt_boxes,
                             const std::vector<int>& gt_classes, const std::vector<int>& assignment,
                             int64_t num_classes, double alpha) {
  if (assignment.size() != defaults.size()) {
    throw InvalidInput("detection_loss: assignment size does not match defaults");
  }
  if (gt_boxes.size() != gt_classes.size()) {
    throw InvalidInput("detection_loss: gt boxes and classes differ in length");
  }
  const int64_t d_count = static_cast<int64_t>(defaults.size());
  const int64_t class_count = num_classes + 1;  // background last
  const int64_t bg = num_classes;

  std::vector<int64_t> pos_rows;
  std::vector<int64_t> pos_defaults;
  for (int64_t d = 0; d < d_count; ++d) {
    if (assignment[d] >= 0) {
      pos_rows.push_back(row_offset + d);
      pos_defaults.push_back(d);
    }
  }
  const int64_t n_pos = static_cast<int64_t>(pos_rows.size());
  const double norm = 1.0 / static_cast<double>(std::max<int64_t>(1, n_pos));

  DetectionLoss out;
  out.positives = n_pos;

  // Localization: smooth L1 between predicted offsets and encoded gt.
  if (n_pos > 0) {
    Tensor targets({n_pos, 4});
    for (int64_t i = 0; i < n_pos; ++i) {
      const int64_t d = pos_defaults[i];
      const OffsetVector o = encode_offsets(gt_boxes[assignment[d]], defaults[d]);
      targets[i * 4 + 0] = o.dx;
      targets[i * 4 + 1] = o.dy;
      targets[i * 4 + 2] = o.dw;
      targets[i * 4 + 3] = o.dh;
    }
    out.loc = ad::scale(ad::smooth_l1_sum(ad::rows(loc_all, pos_rows), std::move(targets)), norm);
  } else {
    out.loc = ad::leaf(Tensor::scalar(0.0));
  }

  // Confidence: positives plus the hardest negatives at 3:1 (min 3).
  std::vector<double> neg_loss(d_count, 0.0);
  const Tensor& conf_v = conf_all->value;
  for (int64_t d = 0; d < d_count; ++d) {
    if (assignment[d] >= 0) continue;
    const double* row = conf_v.data() + (row_offset + d) * class_count;
    double m = row[0];
    for (int64_t c = 1; c < class_count; ++c) m = std::max(m, row[c]);
    double lse = 0.0;
    for (int64_t c = 0; c < class_count; ++c) lse += std::exp(row[c] - m);
    neg_loss[d] = m + std::log(lse) - row[bg];
  }
  std::vector<int64_t> neg_order;
  for (int64_t d = 0; d < d_count; ++d) {
    if (assignment[d] < 0) neg_order.push_back(d);
  }
  std::sort(neg_order.begin(), neg_order.end(), [&](int64_t a, int64_t b) {
    if (neg_loss[a] != neg_loss[b]) return neg_loss[a] > neg_loss[b];
    return a < b;
  });
  const int64_t n_neg = std::min<int64_t>(static_cast<int64_t>(neg_order.size()),
                                          3 * std::max<int64_t>(1, n_pos));

  std::vector<int64_t> conf_rows = pos_rows;
  std::vector<int64_t> conf_targets;
  for (int64_t i = 0; i < n_pos; ++i) conf_targets.push_back(gt_classes[assignment[pos_defaults[i]]]);
  for (int64_t i = 0; i < n_neg; ++i) {
    conf_rows.push_back(row_offset + neg_order[i]);
    conf_targets.push_back(bg);
  }
  out.conf = ad::scale(ad::softmax_ce_sum(ad::rows(conf_all, conf_rows), conf_targets), norm);

  out.total = ad::add(out.loc, ad::scale(out.conf, alpha));
  return out;
}

std::vector<Detection> decode_detections(const Tensor& loc, const Tensor& conf_logits,
                                         const std::vector<BBox>& defaults, int64_t num_classes,
                                         const DecodeConfig& cfg) {
  const int64_t d_count = static_cast<int64_t>(defaults.size());
  if (loc.rank() != 2 || loc.dim(0) != d_count || loc.dim(1) != 4) {
    throw ShapeError("decode: loc " + shape_string(loc.shape()) + " does not match " +
                     std::to_string(d_count) + " defaults");
  }
  if (conf_logits.rank() != 2 || conf_logits.dim(0) != d_count ||
      conf_logits.dim(1) != num_classes + 1) {
    throw ShapeError("decode: conf " + shape_string(conf_logits.shape()) + " does not match " +
                     std::to_string(d_count) + " defaults with " + std::to_string(num_classes) +
                     " classes");
  }

  const Tensor probs = ad::softmax_rows(conf_logits);
  std::vector<Detection> candidates;
  for (int64_t d = 0; d < d_count; ++d) {
    const double* p = probs.data() + d * (num_classes + 1);
    int best = 0;
    for (int64_t c = 1; c < num_classes; ++c) {
      if (p[c] > p[best]) best = static_cast<int>(c);
    }
    if (p[best] < cfg.conf_threshold) continue;
    const OffsetVector o{loc[d * 4], loc[d * 4 + 1], loc[d * 4 + 2], loc[d * 4 + 3]};
    const BBox box = clip_box(decode_offsets(o, defaults[d]), cfg.image_size, cfg.image_size);
    if (!box.valid()) continue;
    Detection det;
    det.box = box;
    det.cls = best;
    det.conf.assign(p, p + num_classes);
    candidates.push_back(std::move(det));
  }

  std::sort(candidates.begin(), candidates.end(), [](const Detection& a, const Detection& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    if (!(a.box == b.box)) return a.box < b.box;
    return a.cls < b.cls;
  });

  std::vector<Detection> kept;
  for (const Detection& cand : candidates) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.cls == cand.cls && iou(k.box, cand.box) > cfg.nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(cand);
      if (static_cast<int64_t>(kept.size()) == cfg.max_detections) break;
    }
  }
  return kept;
}

}  // namespace vmrn::det

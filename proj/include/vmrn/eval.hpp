#pragma once

#include <map>
#include <string>
#include <vector>

#include "vmrn/dataio.hpp"
#include "vmrn/model.hpp"

namespace vmrn::metrics {

/// Wire records for prediction dumps (JSON lines). A detection line carries
/// {image_id, cls, conf, bbox}; a relation line {image_id, subj_idx,
/// obj_idx, probs} with indexes into that image's detection list.
struct DetRecord {
  BBox box;
  int cls = 0;
  double conf = 0.0;
};

struct RelRecord {
  int subj = 0;
  int obj = 0;
  tree::Prob3 probs{0, 0, 0};
};

struct ImageRecord {
  std::string image_id;
  std::vector<DetRecord> detections;
  std::vector<RelRecord> rels;
};

ImageRecord to_record(const std::string& image_id, const ImagePrediction& pred);
std::string dump_jsonl(const ImageRecord& record);
std::vector<ImageRecord> parse_dump(const std::string& text);

/// A triplet treated as one unit: the unordered pair (a, b), a < b, with the
/// oriented label of (a, b). NO_REL pairs are triplets too — the image
/// metric requires all of them.
struct Triplet {
  int a = 0;
  int b = 0;
  tree::RelationLabel label = tree::RelationLabel::kNoRel;
};

/// Gt triplets of a scene, over node indexes.
std::vector<Triplet> gt_triplets(const data::SceneAnnotation& scene);

/// Predicted triplets of an image record: reconciled label per unordered
/// detection pair, confidence = rel confidence * both detection scores.
struct PredictedTriplet {
  Triplet triplet;           // over detection indexes
  double confidence = 0.0;
};
std::vector<PredictedTriplet> predicted_triplets(const ImageRecord& record);

struct ObjectEvalResult {
  double recall = 0.0;
  double precision = 0.0;
  int64_t tp = 0, fp = 0, fn = 0;
};

/// Triplet recall/precision: a prediction is correct when both boxes hit
/// distinct gt objects of the right class at IoU > 0.5 and the oriented
/// label matches; every gt triplet is creditable once, in confidence order.
ObjectEvalResult eval_object(const std::vector<ImageRecord>& preds,
                             const std::vector<const data::SceneAnnotation*>& gts,
                             const data::ClassPalette& palette);

struct ImageEvalResult {
  double accuracy = 0.0;
  int64_t correct = 0, total = 0;
};

/// Fraction of images whose predicted triplet set equals the gt set exactly.
ImageEvalResult eval_image(const std::vector<ImageRecord>& preds,
                           const std::vector<const data::SceneAnnotation*>& gts,
                           const data::ClassPalette& palette);

struct MapResult {
  double map = 0.0;
  std::map<int, double> per_class;      // classes present in gt
  std::vector<int> skipped_classes;     // in predictions but absent from gt
};

/// 11-point interpolated AP at IoU > 0.5 per class, averaged.
MapResult eval_map(const std::vector<ImageRecord>& preds,
                   const std::vector<const data::SceneAnnotation*>& gts,
                   const data::ClassPalette& palette);

struct RelEvalResult {
  double accuracy = 0.0;
  int64_t correct = 0, total = 0;
};

/// One image's offline relation evaluation: predicted scores for every
/// ordered pair of gt nodes plus the gt labels.
struct RelCase {
  std::vector<int> nodes;
  tree::PairwiseScores scores;
  tree::PairwiseLabels labels;
};

/// Accuracy of the reconciled label over all unordered pairs of all cases.
RelEvalResult rel_accuracy_from_cases(const std::vector<RelCase>& cases);

/// Relation accuracy on ground-truth boxes: features pooled from gt boxes,
/// reconciled label per unordered gt pair against the gt tree.
RelEvalResult eval_rel(const Model& model, const std::vector<data::Scene>& test);

struct MetricReport {
  double rel_accuracy = 0.0;
  double obj_recall = 0.0;
  double obj_precision = 0.0;
  double img_accuracy = 0.0;
  double map = 0.0;
  int64_t rel_correct = 0, rel_total = 0;
  int64_t obj_tp = 0, obj_fp = 0, obj_fn = 0;
  int64_t img_correct = 0, img_total = 0;
  std::map<int, double> per_class_ap;

  std::string to_json(const data::ClassPalette& palette) const;
};

/// Runs the full forward on every test scene and computes all metrics.
MetricReport evaluate(const Model& model, const std::vector<data::Scene>& test,
                      const data::ClassPalette& palette);

}  // namespace vmrn::metrics

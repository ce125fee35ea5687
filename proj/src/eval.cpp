#include "vmrn/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace vmrn::metrics {

using nlohmann::ordered_json;

ImageRecord to_record(const std::string& image_id, const ImagePrediction& pred) {
  ImageRecord rec;
  rec.image_id = image_id;
  for (const auto& d : pred.detections) rec.detections.push_back({d.box, d.cls, d.score()});
  for (const auto& [pair, probs] : pred.rel_probs) {
    rec.rels.push_back({pair.first, pair.second, probs});
  }
  return rec;
}

std::string dump_jsonl(const ImageRecord& record) {
  std::string out;
  for (const auto& d : record.detections) {
    ordered_json j;
    j["image_id"] = record.image_id;
    j["cls"] = d.cls;
    j["conf"] = d.conf;
    j["bbox"] = {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max};
    out += j.dump() + "\n";
  }
  for (const auto& r : record.rels) {
    ordered_json j;
    j["image_id"] = record.image_id;
    j["subj_idx"] = r.subj;
    j["obj_idx"] = r.obj;
    j["probs"] = {r.probs[0], r.probs[1], r.probs[2]};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<ImageRecord> parse_dump(const std::string& text) {
  std::vector<ImageRecord> records;
  std::map<std::string, size_t> index;
  size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      const std::string id = j.at("image_id").get<std::string>();
      auto it = index.find(id);
      if (it == index.end()) {
        it = index.emplace(id, records.size()).first;
        records.push_back(ImageRecord{id, {}, {}});
      }
      ImageRecord& rec = records[it->second];
      if (j.contains("bbox")) {
        const auto& bb = j.at("bbox");
        rec.detections.push_back({BBox{bb.at(0).get<double>(), bb.at(1).get<double>(),
                                       bb.at(2).get<double>(), bb.at(3).get<double>()},
                                  j.at("cls").get<int>(), j.at("conf").get<double>()});
      } else {
        const auto& p = j.at("probs");
        rec.rels.push_back({j.at("subj_idx").get<int>(), j.at("obj_idx").get<int>(),
                            tree::Prob3{p.at(0).get<double>(), p.at(1).get<double>(),
                                        p.at(2).get<double>()}});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dump line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<Triplet> gt_triplets(const data::SceneAnnotation& scene) {
  const auto labels = tree::tree_to_labels(scene.tree());
  std::vector<int> nodes;
  for (const auto& obj : scene.objects) nodes.push_back(obj.node_index);
  std::sort(nodes.begin(), nodes.end());
  std::vector<Triplet> out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (size_t j = i + 1; j < nodes.size(); ++j) {
      out.push_back({nodes[i], nodes[j], labels.at({nodes[i], nodes[j]})});
    }
  }
  return out;
}

std::vector<PredictedTriplet> predicted_triplets(const ImageRecord& record) {
  std::map<std::pair<int, int>, tree::Prob3> probs;
  for (const auto& r : record.rels) probs[{r.subj, r.obj}] = r.probs;

  std::vector<PredictedTriplet> out;
  const int n = static_cast<int>(record.detections.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto fwd = probs.find({i, j});
      const auto rev = probs.find({j, i});
      if (fwd == probs.end() || rev == probs.end()) {
        throw InvalidInput("prediction dump misses relation for pair (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
      const auto rec = tree::reconcile(fwd->second, rev->second);
      out.push_back({Triplet{i, j, rec.label},
                     rec.confidence * record.detections[i].conf * record.detections[j].conf});
    }
  }
  return out;
}

namespace {

struct GtObjects {
  std::map<int, const data::ObjectAnnotation*> by_node;
};

GtObjects index_gt(const data::SceneAnnotation& scene) {
  GtObjects g;
  for (const auto& obj : scene.objects) g.by_node[obj.node_index] = &obj;
  return g;
}

bool box_hits(const DetRecord& det, const data::ObjectAnnotation& obj,
              const data::ClassPalette& palette) {
  return det.cls == palette.id_of(obj.class_name) && iou(det.box, obj.box) > 0.5;
}

// Greedy confidence-ordered matching of one image's predicted triplets to
// its gt triplets. Returns per-prediction correctness plus the credited
// count; `order` fixes ties deterministically.
struct ImageMatch {
  std::vector<bool> correct;
  int64_t credited = 0;
};

ImageMatch match_image(const ImageRecord& rec, const data::SceneAnnotation& gt,
                       const data::ClassPalette& palette) {
  const auto preds = predicted_triplets(rec);
  const auto gts = gt_triplets(gt);
  const GtObjects gt_index = index_gt(gt);

  std::vector<size_t> order(preds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    if (preds[x].confidence != preds[y].confidence) return preds[x].confidence > preds[y].confidence;
    return std::pair{preds[x].triplet.a, preds[x].triplet.b} <
           std::pair{preds[y].triplet.a, preds[y].triplet.b};
  });

  ImageMatch result;
  result.correct.assign(preds.size(), false);
  std::vector<bool> credited(gts.size(), false);
  for (size_t oi : order) {
    const PredictedTriplet& p = preds[oi];
    const DetRecord& ds = rec.detections[static_cast<size_t>(p.triplet.a)];
    const DetRecord& do_ = rec.detections[static_cast<size_t>(p.triplet.b)];
    for (size_t g = 0; g < gts.size(); ++g) {
      if (credited[g]) continue;
      const data::ObjectAnnotation& ga = *gt_index.by_node.at(gts[g].a);
      const data::ObjectAnnotation& gb = *gt_index.by_node.at(gts[g].b);
      const bool direct = box_hits(ds, ga, palette) && box_hits(do_, gb, palette) &&
                          p.triplet.label == gts[g].label;
      const bool swapped = box_hits(ds, gb, palette) && box_hits(do_, ga, palette) &&
                           p.triplet.label == tree::inverse_label(gts[g].label);
      if (direct || swapped) {
        credited[g] = true;
        result.correct[oi] = true;
        ++result.credited;
        break;
      }
    }
  }
  return result;
}

}  // namespace

ObjectEvalResult eval_object(const std::vector<ImageRecord>& preds,
                             const std::vector<const data::SceneAnnotation*>& gts,
                             const data::ClassPalette& palette) {
  if (preds.size() != gts.size()) throw InvalidInput("eval_object: prediction/gt count mismatch");
  ObjectEvalResult r;
  int64_t total_gt = 0, total_pred = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const ImageMatch m = match_image(preds[i], *gts[i], palette);
    r.tp += m.credited;
    total_pred += static_cast<int64_t>(m.correct.size());
    total_gt += static_cast<int64_t>(gt_triplets(*gts[i]).size());
  }
  r.fp = total_pred - r.tp;
  r.fn = total_gt - r.tp;
  r.recall = total_gt > 0 ? static_cast<double>(r.tp) / static_cast<double>(total_gt) : 0.0;
  r.precision = total_pred > 0 ? static_cast<double>(r.tp) / static_cast<double>(total_pred) : 0.0;
  return r;
}

ImageEvalResult eval_image(const std::vector<ImageRecord>& preds,
                           const std::vector<const data::SceneAnnotation*>& gts,
                           const data::ClassPalette& palette) {
  if (preds.size() != gts.size()) throw InvalidInput("eval_image: prediction/gt count mismatch");
  ImageEvalResult r;
  r.total = static_cast<int64_t>(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    const ImageMatch m = match_image(preds[i], *gts[i], palette);
    const int64_t n_gt = static_cast<int64_t>(gt_triplets(*gts[i]).size());
    const bool all_preds_correct =
        std::all_of(m.correct.begin(), m.correct.end(), [](bool b) { return b; });
    if (all_preds_correct && m.credited == n_gt) ++r.correct;
  }
  r.accuracy = r.total > 0 ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

MapResult eval_map(const std::vector<ImageRecord>& preds,
                   const std::vector<const data::SceneAnnotation*>& gts,
                   const data::ClassPalette& palette) {
  if (preds.size() != gts.size()) throw InvalidInput("eval_map: prediction/gt count mismatch");

  std::map<int, int64_t> gt_count;
  for (const auto* gt : gts) {
    for (const auto& obj : gt->objects) gt_count[palette.id_of(obj.class_name)]++;
  }

  struct Entry {
    size_t image;
    size_t det;
    double conf;
  };
  std::map<int, std::vector<Entry>> by_class;
  std::vector<int> skipped;
  for (size_t i = 0; i < preds.size(); ++i) {
    for (size_t d = 0; d < preds[i].detections.size(); ++d) {
      const int cls = preds[i].detections[d].cls;
      if (!gt_count.count(cls)) {
        if (std::find(skipped.begin(), skipped.end(), cls) == skipped.end()) skipped.push_back(cls);
        continue;
      }
      by_class[cls].push_back({i, d, preds[i].detections[d].conf});
    }
  }

  MapResult result;
  result.skipped_classes = skipped;
  double ap_sum = 0.0;
  for (const auto& [cls, count] : gt_count) {
    std::vector<Entry> entries;
    if (by_class.count(cls)) entries = by_class.at(cls);
    std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
      if (a.conf != b.conf) return a.conf > b.conf;
      if (a.image != b.image) return a.image < b.image;
      return preds[a.image].detections[a.det].box < preds[b.image].detections[b.det].box;
    });

    std::map<size_t, std::vector<bool>> used;  // per image, per gt object of this class
    std::vector<std::pair<double, double>> curve;  // (recall, precision)
    int64_t tp = 0, fp = 0;
    for (const Entry& e : entries) {
      const auto& scene = *gts[e.image];
      std::vector<const data::ObjectAnnotation*> objs;
      for (const auto& obj : scene.objects) {
        if (palette.id_of(obj.class_name) == cls) objs.push_back(&obj);
      }
      auto& taken = used[e.image];
      taken.resize(objs.size(), false);
      int best = -1;
      double best_iou = 0.5;
      for (size_t g = 0; g < objs.size(); ++g) {
        if (taken[g]) continue;
        const double v = iou(preds[e.image].detections[e.det].box, objs[g]->box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        taken[static_cast<size_t>(best)] = true;
        ++tp;
      } else {
        ++fp;
      }
      curve.emplace_back(static_cast<double>(tp) / static_cast<double>(count),
                         static_cast<double>(tp) / static_cast<double>(tp + fp));
    }

    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double best_p = 0.0;
      for (const auto& [recall, precision] : curve) {
        if (recall >= r) best_p = std::max(best_p, precision);
      }
      ap += best_p;
    }
    ap /= 11.0;
    result.per_class[cls] = ap;
    ap_sum += ap;
  }
  result.map = gt_count.empty() ? 0.0 : ap_sum / static_cast<double>(gt_count.size());
  return result;
}

RelEvalResult rel_accuracy_from_cases(const std::vector<RelCase>& cases) {
  RelEvalResult r;
  for (const auto& c : cases) {
    for (size_t i = 0; i < c.nodes.size(); ++i) {
      for (size_t j = i + 1; j < c.nodes.size(); ++j) {
        // scores are keyed by position, labels by node index
        const auto rec = tree::reconcile(c.scores.at({static_cast<int>(i), static_cast<int>(j)}),
                                         c.scores.at({static_cast<int>(j), static_cast<int>(i)}));
        if (rec.label == c.labels.at({c.nodes[i], c.nodes[j]})) ++r.correct;
        ++r.total;
      }
    }
  }
  if (r.total == 0) throw InvalidInput("eval_rel: no object pairs to evaluate");
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

RelEvalResult eval_rel(const Model& model, const std::vector<data::Scene>& test) {
  if (test.empty()) throw InvalidInput("eval_rel: empty test set");
  std::vector<RelCase> cases;
  for (const auto& scene : test) {
    if (scene.annotation.objects.size() < 2) continue;
    RelCase c;
    std::vector<BBox> boxes;
    for (const auto& obj : scene.annotation.objects) {
      boxes.push_back(obj.box);
      c.nodes.push_back(obj.node_index);
    }
    c.scores = rel_probs_for_boxes(model, scene.image, boxes);
    c.labels = tree::tree_to_labels(scene.annotation.tree());
    cases.push_back(std::move(c));
  }
  return rel_accuracy_from_cases(cases);
}

std::string MetricReport::to_json(const data::ClassPalette& palette) const {
  ordered_json j;
  j["rel_accuracy"] = rel_accuracy;
  j["obj_recall"] = obj_recall;
  j["obj_precision"] = obj_precision;
  j["img_accuracy"] = img_accuracy;
  j["map"] = map;
  j["counts"]["rel_correct"] = rel_correct;
  j["counts"]["rel_total"] = rel_total;
  j["counts"]["obj_tp"] = obj_tp;
  j["counts"]["obj_fp"] = obj_fp;
  j["counts"]["obj_fn"] = obj_fn;
  j["counts"]["img_correct"] = img_correct;
  j["counts"]["img_total"] = img_total;
  ordered_json ap = ordered_json::object();
  for (const auto& [cls, value] : per_class_ap) ap[palette.names.at(static_cast<size_t>(cls))] = value;
  j["per_class_ap"] = std::move(ap);
  return j.dump(2) + "\n";
}

MetricReport evaluate(const Model& model, const std::vector<data::Scene>& test,
                      const data::ClassPalette& palette) {
  if (test.empty()) throw InvalidInput("evaluate: empty test set");

  std::vector<ImageRecord> records;
  std::vector<const data::SceneAnnotation*> gts;
  for (const auto& scene : test) {
    records.push_back(to_record(scene.annotation.image_id, predict_scene(model, scene.image)));
    gts.push_back(&scene.annotation);
  }

  MetricReport report;
  const auto rel = eval_rel(model, test);
  report.rel_accuracy = rel.accuracy;
  report.rel_correct = rel.correct;
  report.rel_total = rel.total;

  const auto obj = eval_object(records, gts, palette);
  report.obj_recall = obj.recall;
  report.obj_precision = obj.precision;
  report.obj_tp = obj.tp;
  report.obj_fp = obj.fp;
  report.obj_fn = obj.fn;

  const auto img = eval_image(records, gts, palette);
  report.img_accuracy = img.accuracy;
  report.img_correct = img.correct;
  report.img_total = img.total;

  const auto map = eval_map(records, gts, palette);
  report.map = map.map;
  report.per_class_ap = map.per_class;
  return report;
}

}  // namespace vmrn::metrics

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vmrn/eval.hpp"
#include "vmrn/rng.hpp"

using namespace vmrn;
using namespace vmrn::metrics;
using tree::RelationLabel;

namespace {

// ---- naive reference implementations (no sorting shortcuts) -----------------

struct NaiveTriplet {
  int a, b;
  RelationLabel label;
  double conf;
  bool processed = false;
  bool correct = false;
};

std::vector<NaiveTriplet> naive_pred_triplets(const ImageRecord& rec) {
  std::vector<NaiveTriplet> out;
  for (int i = 0; i < static_cast<int>(rec.detections.size()); ++i) {
    for (int j = i + 1; j < static_cast<int>(rec.detections.size()); ++j) {
      tree::Prob3 pij{}, pji{};
      for (const auto& r : rec.rels) {
        if (r.subj == i && r.obj == j) pij = r.probs;
        if (r.subj == j && r.obj == i) pji = r.probs;
      }
      const auto rc = test::oracle_reconcile(pij, pji);
      out.push_back({i, j, rc.label,
                     rc.confidence * rec.detections[static_cast<size_t>(i)].conf *
                         rec.detections[static_cast<size_t>(j)].conf});
    }
  }
  return out;
}

struct NaiveImageResult {
  int64_t tp = 0;
  int64_t n_pred = 0;
  int64_t n_gt = 0;
  bool image_correct = false;
};

NaiveImageResult naive_match_image(const ImageRecord& rec, const data::SceneAnnotation& gt,
                                   const data::ClassPalette& palette) {
  auto preds = naive_pred_triplets(rec);
  const auto labels = tree::tree_to_labels(gt.tree());
  std::vector<int> nodes;
  for (const auto& o : gt.objects) nodes.push_back(o.node_index);
  std::sort(nodes.begin(), nodes.end());

  struct GtTriplet {
    int a, b;
    RelationLabel label;
    bool credited = false;
  };
  std::vector<GtTriplet> gts;
  for (size_t i = 0; i < nodes.size(); ++i)
    for (size_t j = i + 1; j < nodes.size(); ++j)
      gts.push_back({nodes[i], nodes[j], labels.at({nodes[i], nodes[j]})});

  auto obj_of = [&](int node) -> const data::ObjectAnnotation& {
    for (const auto& o : gt.objects)
      if (o.node_index == node) return o;
    throw std::logic_error("node not found");
  };
  auto hits = [&](const DetRecord& d, const data::ObjectAnnotation& o) {
    return d.cls == palette.id_of(o.class_name) && iou(d.box, o.box) > 0.5;
  };

  NaiveImageResult res;
  res.n_pred = static_cast<int64_t>(preds.size());
  res.n_gt = static_cast<int64_t>(gts.size());
  for (;;) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(preds.size()); ++i) {
      if (preds[static_cast<size_t>(i)].processed) continue;
      if (best < 0) {
        best = i;
        continue;
      }
      const auto& p = preds[static_cast<size_t>(i)];
      const auto& q = preds[static_cast<size_t>(best)];
      if (p.conf > q.conf ||
          (p.conf == q.conf && std::pair{p.a, p.b} < std::pair{q.a, q.b})) {
        best = i;
      }
    }
    if (best < 0) break;
    auto& p = preds[static_cast<size_t>(best)];
    p.processed = true;
    for (auto& g : gts) {
      if (g.credited) continue;
      const auto& da = rec.detections[static_cast<size_t>(p.a)];
      const auto& db = rec.detections[static_cast<size_t>(p.b)];
      const bool direct = hits(da, obj_of(g.a)) && hits(db, obj_of(g.b)) && p.label == g.label;
      const bool swapped =
          hits(da, obj_of(g.b)) && hits(db, obj_of(g.a)) && p.label == tree::inverse_label(g.label);
      if (direct || swapped) {
        g.credited = true;
        p.correct = true;
        ++res.tp;
        break;
      }
    }
  }
  res.image_correct = res.tp == res.n_gt &&
                      std::all_of(preds.begin(), preds.end(), [](const NaiveTriplet& p) {
                        return p.correct;
                      });
  return res;
}

RelEvalResult naive_rel_accuracy(const std::vector<RelCase>& cases) {
  RelEvalResult r;
  for (const auto& c : cases) {
    for (size_t i = 0; i < c.nodes.size(); ++i) {
      for (size_t j = i + 1; j < c.nodes.size(); ++j) {
        const auto rc = test::oracle_reconcile(c.scores.at({(int)i, (int)j}),
                                               c.scores.at({(int)j, (int)i}));
        if (rc.label == c.labels.at({c.nodes[i], c.nodes[j]})) ++r.correct;
        ++r.total;
      }
    }
  }
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

// ---- random case generation -------------------------------------------------

tree::Prob3 random_prob(Rng& rng) {
  tree::Prob3 p{rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)};
  const double s = p[0] + p[1] + p[2];
  for (double& v : p) v /= s;
  return p;
}

tree::Prob3 biased_prob(Rng& rng, RelationLabel label) {
  tree::Prob3 p = random_prob(rng);
  p[static_cast<size_t>(tree::label_index(label))] += 1.2;
  const double s = p[0] + p[1] + p[2];
  for (double& v : p) v /= s;
  return p;
}

data::SceneAnnotation random_gt(Rng& rng, const data::ClassPalette& palette, int max_objects = 4) {
  data::SceneAnnotation s;
  s.image_id = "case";
  s.image_path = "x.png";
  s.width = s.height = 64;
  const int n = 1 + static_cast<int>(rng.uniform_int(max_objects));
  for (int i = 0; i < n; ++i) {
    data::ObjectAnnotation o;
    o.class_name = palette.names[static_cast<size_t>(rng.uniform_int(palette.size()))];
    const double x0 = rng.uniform(0.0, 40.0), y0 = rng.uniform(0.0, 40.0);
    o.box = BBox{x0, y0, x0 + rng.uniform(8.0, 20.0), y0 + rng.uniform(8.0, 20.0)};
    o.node_index = i;
    s.objects.push_back(o);
  }
  for (int i = 1; i < n; ++i) {
    if (rng.bernoulli(0.45)) {
      const int p = static_cast<int>(rng.uniform_int(i));
      s.objects[static_cast<size_t>(i)].parent_indexes.push_back(p);
      s.objects[static_cast<size_t>(p)].child_indexes.push_back(i);
    }
  }
  return s;
}

ImageRecord random_prediction(Rng& rng, const data::SceneAnnotation& gt,
                              const data::ClassPalette& palette) {
  ImageRecord rec;
  rec.image_id = gt.image_id;
  const auto labels = tree::tree_to_labels(gt.tree());
  std::vector<int> det_node;  // gt node each detection imitates, -1 spurious
  for (const auto& obj : gt.objects) {
    if (rng.bernoulli(0.85)) {
      DetRecord d;
      const double jitter = rng.bernoulli(0.8) ? 1.5 : 8.0;
      d.box = BBox{obj.box.x_min + rng.uniform(-jitter, jitter),
                   obj.box.y_min + rng.uniform(-jitter, jitter),
                   obj.box.x_max + rng.uniform(-jitter, jitter),
                   obj.box.y_max + rng.uniform(-jitter, jitter)};
      if (!d.box.valid()) d.box = obj.box;
      d.cls = rng.bernoulli(0.85) ? palette.id_of(obj.class_name)
                                  : static_cast<int>(rng.uniform_int(palette.size()));
      d.conf = rng.uniform(0.5, 1.0);
      rec.detections.push_back(d);
      det_node.push_back(obj.node_index);
    }
  }
  if (rng.bernoulli(0.35)) {
    const double x0 = rng.uniform(0.0, 40.0), y0 = rng.uniform(0.0, 40.0);
    rec.detections.push_back({BBox{x0, y0, x0 + 10, y0 + 10},
                              static_cast<int>(rng.uniform_int(palette.size())),
                              rng.uniform(0.5, 1.0)});
    det_node.push_back(-1);
  }
  const int n = static_cast<int>(rec.detections.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      tree::Prob3 p;
      if (det_node[static_cast<size_t>(i)] >= 0 && det_node[static_cast<size_t>(j)] >= 0 &&
          rng.bernoulli(0.7)) {
        p = biased_prob(rng, labels.at({det_node[static_cast<size_t>(i)],
                                        det_node[static_cast<size_t>(j)]}));
      } else {
        p = random_prob(rng);
      }
      rec.rels.push_back({i, j, p});
    }
  }
  return rec;
}

// exact gt prediction for a scene (classes right, boxes equal, labels certain)
ImageRecord perfect_prediction(const data::SceneAnnotation& gt, const data::ClassPalette& palette) {
  ImageRecord rec;
  rec.image_id = gt.image_id;
  const auto labels = tree::tree_to_labels(gt.tree());
  for (const auto& obj : gt.objects) {
    rec.detections.push_back({obj.box, palette.id_of(obj.class_name), 0.95});
  }
  const int n = static_cast<int>(gt.objects.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      tree::Prob3 p{0, 0, 0};
      p[static_cast<size_t>(tree::label_index(
          labels.at({gt.objects[static_cast<size_t>(i)].node_index,
                     gt.objects[static_cast<size_t>(j)].node_index})))] = 1.0;
      rec.rels.push_back({i, j, p});
    }
  }
  return rec;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("perfect predictions score 1.0 everywhere") {
  Rng rng(90);
  const auto palette = data::default_palette(5);
  std::vector<ImageRecord> preds;
  std::vector<data::SceneAnnotation> scenes;
  for (int i = 0; i < 10; ++i) scenes.push_back(random_gt(rng, palette));
  std::vector<const data::SceneAnnotation*> gts;
  for (auto& s : scenes) {
    preds.push_back(perfect_prediction(s, palette));
    gts.push_back(&s);
  }
  const auto obj = eval_object(preds, gts, palette);
  CHECK(obj.recall == 1.0);
  CHECK(obj.precision == 1.0);
  CHECK(eval_image(preds, gts, palette).accuracy == 1.0);
  CHECK(eval_map(preds, gts, palette).map == 1.0);
}

TEST_CASE("one correct and one spurious triplet give 0.5/0.5") {
  const auto palette = data::default_palette(5);
  data::SceneAnnotation gt;
  gt.image_id = "two";
  gt.image_path = "x.png";
  gt.width = gt.height = 64;
  gt.objects = {{"book", BBox{0, 0, 20, 20}, 0, {}, {1}},
                {"cup", BBox{4, 4, 16, 16}, 1, {0}, {}},
                {"pen", BBox{30, 30, 50, 50}, 2, {}, {}}};
  // gt triplets: (0,1) parent, (0,2) norel, (1,2) norel
  ImageRecord rec = perfect_prediction(gt, palette);
  // corrupt the (0,2) and (1,2) relations: flip (0,2) to parent-of, keep
  // detection 2's class wrong so its triplets cannot match
  rec.detections[2].cls = palette.id_of("can");
  const std::vector<const data::SceneAnnotation*> gts{&gt};
  const std::vector<ImageRecord> preds{rec};
  const auto obj = eval_object(preds, gts, palette);
  // 3 predicted triplets, 1 correct (0,1); gt triplets 3 -> recall 1/3
  CHECK(obj.tp == 1);
  CHECK(obj.fp == 2);
  CHECK(obj.fn == 2);
  CHECK(obj.recall == doctest::Approx(1.0 / 3));
  CHECK(obj.precision == doctest::Approx(1.0 / 3));
  CHECK(eval_image(preds, gts, palette).accuracy == 0.0);
}

TEST_CASE("a flipped relation is both a false positive and a false negative") {
  const auto palette = data::default_palette(5);
  data::SceneAnnotation gt;
  gt.image_id = "flip";
  gt.image_path = "x.png";
  gt.width = gt.height = 64;
  gt.objects = {{"book", BBox{0, 0, 20, 20}, 0, {}, {1}},
                {"cup", BBox{4, 4, 16, 16}, 1, {0}, {}}};
  ImageRecord rec = perfect_prediction(gt, palette);
  for (auto& r : rec.rels) std::swap(r.probs[0], r.probs[1]);  // reverse every direction
  const std::vector<const data::SceneAnnotation*> gts{&gt};
  const auto obj = eval_object({rec}, gts, palette);
  CHECK(obj.tp == 0);
  CHECK(obj.fp == 1);
  CHECK(obj.fn == 1);
}

TEST_CASE("one imperfect image out of two halves the image accuracy") {
  const auto palette = data::default_palette(5);
  Rng rng(91);
  auto a = random_gt(rng, palette, 3);
  data::SceneAnnotation b = a;
  b.image_id = "second";
  std::vector<ImageRecord> preds{perfect_prediction(a, palette), perfect_prediction(b, palette)};
  if (preds[1].detections.empty()) return;  // degenerate draw, nothing to break
  preds[1].detections[0].cls = (preds[1].detections[0].cls + 1) % palette.size();
  const std::vector<const data::SceneAnnotation*> gts{&a, &b};
  if (a.objects.size() < 2) return;
  CHECK(eval_image(preds, gts, palette).accuracy == doctest::Approx(0.5));
}

TEST_CASE("image accuracy never exceeds the mean per-image triplet correctness") {
  Rng rng(92);
  const auto palette = data::default_palette(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<data::SceneAnnotation> scenes;
    std::vector<ImageRecord> preds;
    for (int i = 0; i < 6; ++i) {
      scenes.push_back(random_gt(rng, palette));
      preds.push_back(random_prediction(rng, scenes.back(), palette));
    }
    std::vector<const data::SceneAnnotation*> gts;
    for (auto& s : scenes) gts.push_back(&s);
    double mean_fraction = 0.0;
    for (size_t i = 0; i < scenes.size(); ++i) {
      const NaiveImageResult m = naive_match_image(preds[i], scenes[i], palette);
      mean_fraction += m.n_gt > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.n_gt)
                                  : (m.image_correct ? 1.0 : 0.0);
    }
    mean_fraction /= static_cast<double>(scenes.size());
    const auto img = eval_image(preds, gts, palette);
    CHECK(img.accuracy <= mean_fraction + 1e-12);
  }
}

TEST_CASE("object and image metrics match the naive re-implementation exactly") {
  Rng rng(93);
  const auto palette = data::default_palette(5);
  for (int trial = 0; trial < 200; ++trial) {
    data::SceneAnnotation gt = random_gt(rng, palette);
    const ImageRecord rec = random_prediction(rng, gt, palette);
    const std::vector<const data::SceneAnnotation*> gts{&gt};
    const std::vector<ImageRecord> preds{rec};

    const NaiveImageResult naive = naive_match_image(rec, gt, palette);
    const auto obj = eval_object(preds, gts, palette);
    CHECK(obj.tp == naive.tp);
    CHECK(obj.fp == naive.n_pred - naive.tp);
    CHECK(obj.fn == naive.n_gt - naive.tp);
    const auto img = eval_image(preds, gts, palette);
    CHECK((img.correct == 1) == naive.image_correct);
  }
}

TEST_CASE("relation accuracy matches the naive re-implementation exactly") {
  Rng rng(94);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RelCase> cases;
    const int images = 1 + static_cast<int>(rng.uniform_int(3));
    for (int im = 0; im < images; ++im) {
      RelCase c;
      const int n = 2 + static_cast<int>(rng.uniform_int(3));
      tree::ManipulationTree t;
      for (int i = 0; i < n; ++i) {
        c.nodes.push_back(i);
        t.nodes.push_back(i);
      }
      for (int i = 1; i < n; ++i) {
        if (rng.bernoulli(0.5)) t.edges.push_back({static_cast<int>(rng.uniform_int(i)), i, 1.0});
      }
      c.labels = tree::tree_to_labels(t);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j) c.scores[{i, j}] = random_prob(rng);
      cases.push_back(std::move(c));
    }
    const auto got = rel_accuracy_from_cases(cases);
    const auto want = naive_rel_accuracy(cases);
    CHECK(got.correct == want.correct);
    CHECK(got.total == want.total);
  }
}

TEST_CASE("hand-built 4-pair relation case scores 0.75") {
  auto perfect_case = [](int n, const std::vector<tree::Edge>& edges) {
    RelCase c;
    tree::ManipulationTree t;
    for (int i = 0; i < n; ++i) {
      c.nodes.push_back(i);
      t.nodes.push_back(i);
    }
    t.edges = edges;
    c.labels = tree::tree_to_labels(t);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        tree::Prob3 p{0, 0, 0};
        p[static_cast<size_t>(tree::label_index(c.labels.at({i, j})))] = 1.0;
        c.scores[{i, j}] = p;
      }
    }
    return c;
  };
  // image A: 3 objects (3 pairs), image B: 2 objects (1 pair) -> 4 pairs;
  // corrupt A's (0,1) prediction to NO_REL for exactly 3 correct
  RelCase a = perfect_case(3, {{0, 1, 1.0}});
  a.scores[{0, 1}] = tree::Prob3{0, 0, 1};
  a.scores[{1, 0}] = tree::Prob3{0, 0, 1};
  const RelCase b = perfect_case(2, {{0, 1, 1.0}});
  const auto r = rel_accuracy_from_cases({a, b});
  CHECK(r.total == 4);
  CHECK(r.correct == 3);
  CHECK(r.accuracy == doctest::Approx(0.75));
}

TEST_CASE("mAP: the three-detection hand case gives 28/33") {
  const auto palette = data::default_palette(2);
  data::SceneAnnotation gt;
  gt.image_id = "ap";
  gt.image_path = "x.png";
  gt.width = gt.height = 64;
  gt.objects = {{"book", BBox{0, 0, 10, 10}, 0, {}, {}}, {"book", BBox{30, 30, 40, 40}, 1, {}, {}}};
  ImageRecord rec;
  rec.image_id = "ap";
  rec.detections = {{BBox{0, 0, 10, 10}, 0, 0.9},     // TP
                    {BBox{50, 50, 60, 60}, 0, 0.8},   // FP
                    {BBox{30, 30, 40, 40}, 0, 0.7}};  // TP
  const std::vector<const data::SceneAnnotation*> gts{&gt};
  const auto result = eval_map({rec}, gts, palette);
  CHECK(result.map == doctest::Approx(28.0 / 33.0).epsilon(1e-12));
}

TEST_CASE("mAP: no detections score zero; unknown classes are skipped") {
  const auto palette = data::default_palette(3);
  data::SceneAnnotation gt;
  gt.image_id = "empty";
  gt.image_path = "x.png";
  gt.width = gt.height = 64;
  gt.objects = {{"book", BBox{0, 0, 10, 10}, 0, {}, {}}};
  ImageRecord rec;
  rec.image_id = "empty";
  const std::vector<const data::SceneAnnotation*> gts{&gt};
  CHECK(eval_map({rec}, gts, palette).map == 0.0);

  rec.detections = {{BBox{0, 0, 10, 10}, 2, 0.9}};  // class "can" absent from gt
  const auto result = eval_map({rec}, gts, palette);
  CHECK(result.skipped_classes == std::vector<int>{2});
  CHECK(result.map == 0.0);
}

TEST_CASE("metrics are invariant to image order") {
  Rng rng(95);
  const auto palette = data::default_palette(5);
  std::vector<data::SceneAnnotation> scenes;
  std::vector<ImageRecord> preds;
  for (int i = 0; i < 8; ++i) {
    scenes.push_back(random_gt(rng, palette));
    scenes.back().image_id = "img" + std::to_string(i);
    preds.push_back(random_prediction(rng, scenes.back(), palette));
    preds.back().image_id = scenes.back().image_id;
  }
  std::vector<const data::SceneAnnotation*> gts;
  for (auto& s : scenes) gts.push_back(&s);

  const auto base_obj = eval_object(preds, gts, palette);
  const auto base_img = eval_image(preds, gts, palette);
  const auto base_map = eval_map(preds, gts, palette);

  std::vector<size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
  std::vector<ImageRecord> preds2;
  std::vector<const data::SceneAnnotation*> gts2;
  for (size_t p : perm) {
    preds2.push_back(preds[p]);
    gts2.push_back(gts[p]);
  }
  const auto obj2 = eval_object(preds2, gts2, palette);
  CHECK(obj2.tp == base_obj.tp);
  CHECK(obj2.fp == base_obj.fp);
  CHECK(obj2.fn == base_obj.fn);
  CHECK(eval_image(preds2, gts2, palette).correct == base_img.correct);
  CHECK(eval_map(preds2, gts2, palette).map == doctest::Approx(base_map.map).epsilon(1e-12));
}

TEST_CASE("dump round-trip preserves records") {
  Rng rng(96);
  const auto palette = data::default_palette(5);
  const auto gt = random_gt(rng, palette);
  ImageRecord rec = random_prediction(rng, gt, palette);
  rec.image_id = "dump_me";
  const std::string text = dump_jsonl(rec);
  const auto parsed = parse_dump(text);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].image_id == "dump_me");
  REQUIRE(parsed[0].detections.size() == rec.detections.size());
  REQUIRE(parsed[0].rels.size() == rec.rels.size());
  for (size_t i = 0; i < rec.detections.size(); ++i) {
    CHECK(parsed[0].detections[i].box == rec.detections[i].box);
    CHECK(parsed[0].detections[i].cls == rec.detections[i].cls);
    CHECK(parsed[0].detections[i].conf == rec.detections[i].conf);
  }
  for (size_t i = 0; i < rec.rels.size(); ++i) {
    CHECK(parsed[0].rels[i].subj == rec.rels[i].subj);
    CHECK(parsed[0].rels[i].probs == rec.rels[i].probs);
  }
}

TEST_CASE("malformed dump lines are parse errors with the line number") {
  const std::string good = "{\"image_id\":\"x\",\"cls\":0,\"conf\":0.5,\"bbox\":[1,2,3,4]}\n";
  CHECK_THROWS_WITH_AS(parse_dump(good + "not json\n"), doctest::Contains("line 2"), ParseError);
  CHECK(parse_dump(good).size() == 1);
}

TEST_SUITE_END();

#include "vmrn/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "vmrn/png_io.hpp"
#include "vmrn/rng.hpp"

namespace vmrn::data {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

tree::ManipulationTree SceneAnnotation::tree() const {
  tree::ManipulationTree t;
  for (const auto& obj : objects) t.nodes.push_back(obj.node_index);
  std::sort(t.nodes.begin(), t.nodes.end());
  for (const auto& obj : objects) {
    for (int p : obj.parent_indexes) t.edges.push_back({p, obj.node_index, 1.0});
  }
  return t;
}

void SceneAnnotation::check(const std::string& context) const {
  auto fail = [&](const std::string& msg) { throw InvalidInput(context + ": " + msg); };
  if (width < 1 || height < 1) fail("image size must be positive");

  std::set<int> nodes;
  for (const auto& obj : objects) {
    if (!nodes.insert(obj.node_index).second) {
      fail("duplicate node index " + std::to_string(obj.node_index));
    }
    if (!obj.box.valid()) {
      fail("node " + std::to_string(obj.node_index) + " has invalid box " + to_string(obj.box));
    }
  }

  auto find = [&](int idx) -> const ObjectAnnotation* {
    for (const auto& o : objects)
      if (o.node_index == idx) return &o;
    return nullptr;
  };
  auto contains = [](const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };

  for (const auto& obj : objects) {
    for (int p : obj.parent_indexes) {
      const ObjectAnnotation* parent = find(p);
      if (!parent) {
        fail("node " + std::to_string(obj.node_index) + " lists unknown parent " + std::to_string(p));
      }
      if (!contains(parent->child_indexes, obj.node_index)) {
        fail("node " + std::to_string(obj.node_index) + " lists " + std::to_string(p) +
             " as parent but node " + std::to_string(p) + " does not list it as child");
      }
    }
    for (int c : obj.child_indexes) {
      const ObjectAnnotation* child = find(c);
      if (!child) {
        fail("node " + std::to_string(obj.node_index) + " lists unknown child " + std::to_string(c));
      }
      if (!contains(child->parent_indexes, obj.node_index)) {
        fail("node " + std::to_string(obj.node_index) + " lists " + std::to_string(c) +
             " as child but node " + std::to_string(c) + " does not list it as parent");
      }
    }
  }

  for (const auto& v : tree::validate(tree())) fail(v.detail);
}

namespace {

SceneAnnotation from_json(const ordered_json& j, const std::string& context) {
  auto need = [&](const ordered_json& node, const char* key) -> const ordered_json& {
    if (!node.contains(key)) throw ParseError(context + ": missing field '" + std::string(key) + "'");
    return node.at(key);
  };

  SceneAnnotation s;
  try {
    s.image_id = need(j, "image_id").get<std::string>();
    s.image_path = need(j, "image").get<std::string>();
    s.width = need(j, "width").get<int64_t>();
    s.height = need(j, "height").get<int64_t>();
    for (const auto& o : need(j, "objects")) {
      ObjectAnnotation obj;
      obj.class_name = need(o, "class").get<std::string>();
      const auto& bb = need(o, "bbox");
      if (!bb.is_array() || bb.size() != 4) {
        throw ParseError(context + ": bbox must be [x_min, y_min, x_max, y_max]");
      }
      obj.box = BBox{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                     bb[3].get<double>()};
      obj.node_index = need(o, "node_index").get<int>();
      for (const auto& p : need(o, "parent_indexes")) obj.parent_indexes.push_back(p.get<int>());
      for (const auto& c : need(o, "child_indexes")) obj.child_indexes.push_back(c.get<int>());
      s.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(context + ": " + e.what());
  }
  s.check(context);
  return s;
}

}  // namespace

SceneAnnotation parse_annotation_text(const std::string& text, const std::string& context) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(context + ": " + e.what());
  }
  return from_json(j, context);
}

SceneAnnotation parse_annotation(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open annotation: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_annotation_text(text, path);
}

std::string annotation_to_text(const SceneAnnotation& scene) {
  ordered_json j;
  j["image_id"] = scene.image_id;
  j["image"] = scene.image_path;
  j["width"] = scene.width;
  j["height"] = scene.height;
  j["objects"] = ordered_json::array();
  for (const auto& obj : scene.objects) {
    ordered_json o;
    o["class"] = obj.class_name;
    o["bbox"] = {obj.box.x_min, obj.box.y_min, obj.box.x_max, obj.box.y_max};
    o["node_index"] = obj.node_index;
    o["parent_indexes"] = obj.parent_indexes;
    o["child_indexes"] = obj.child_indexes;
    j["objects"].push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

void emit_annotation(const SceneAnnotation& scene, const std::string& path) {
  scene.check("emit_annotation");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open annotation for writing: " + path);
  os << annotation_to_text(scene);
  if (!os) throw IoError("failed writing annotation: " + path);
}

int ClassPalette::id_of(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw InvalidInput("unknown class name: " + name);
}

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = 6.0 * (h - std::floor(h));
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  return {r + m, g + m, b + m};
}

const std::vector<std::pair<const char*, std::array<double, 3>>> kCuratedPalette = {
    {"book", {0.82, 0.18, 0.18}},    {"box", {0.20, 0.42, 0.82}},
    {"can", {0.95, 0.76, 0.12}},     {"cup", {0.16, 0.70, 0.30}},
    {"pen", {0.58, 0.24, 0.72}},     {"remote", {0.10, 0.78, 0.78}},
    {"apple", {0.95, 0.45, 0.12}},   {"stapler", {0.90, 0.35, 0.62}},
    {"tape", {0.55, 0.65, 0.20}},    {"bottle", {0.46, 0.31, 0.14}},
    {"notebook", {0.78, 0.86, 0.94}},{"mouse", {0.44, 0.44, 0.50}},
    {"wallet", {0.10, 0.32, 0.24}},  {"brush", {0.98, 0.86, 0.62}},
    {"charger", {0.30, 0.12, 0.50}}, {"toy", {0.66, 0.92, 0.32}},
};

}  // namespace

ClassPalette default_palette(int num_classes) {
  if (num_classes < 1 || num_classes > 64) {
    throw InvalidInput("palette size must be in [1, 64], got " + std::to_string(num_classes));
  }
  ClassPalette p;
  for (int i = 0; i < num_classes; ++i) {
    if (i < static_cast<int>(kCuratedPalette.size())) {
      p.names.emplace_back(kCuratedPalette[i].first);
      p.colors.push_back(kCuratedPalette[i].second);
    } else {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "obj%02d", i);
      p.names.emplace_back(buf);
      p.colors.push_back(hsv_to_rgb(0.07 + 0.618033988749895 * i, 0.68, 0.82));
    }
  }
  return p;
}

void SynthConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects) {
    throw InvalidInput("synth: object count range is invalid");
  }
  if (image_size < 32) throw InvalidInput("synth: image size must be >= 32");
  if (num_classes < 1) throw InvalidInput("synth: need at least one class");
  if (stack_prob < 0.0 || stack_prob > 1.0) throw InvalidInput("synth: stack_prob must be in [0, 1]");
}

namespace {

struct Placed {
  BBox box;
  int class_id;
};

// Fraction of `upper` covered by `lower`.
double cover_fraction(const BBox& upper, const BBox& lower) {
  return intersection_area(upper, lower) / upper.area();
}

bool clear_of_others(const BBox& box, const std::vector<Placed>& placed,
                     const std::vector<bool>& ignore) {
  for (size_t k = 0; k < placed.size(); ++k) {
    if (ignore[k]) continue;
    const double inter = intersection_area(box, placed[k].box);
    if (inter > 0.2 * std::min(box.area(), placed[k].box.area())) return false;
  }
  return true;
}

// Deterministic sweep for crowded scenes: the position where the largest
// single-box cover fraction of the candidate is smallest. Any single placed
// box is far smaller than the image, so the best spot always stays below
// the 60% support threshold.
BBox least_covered_spot(double w, double h, double image, const std::vector<Placed>& placed) {
  BBox best{1.0, 1.0, 1.0 + w, 1.0 + h};
  double best_cover = std::numeric_limits<double>::infinity();
  for (double y0 = 1.0; y0 + h <= image - 1.0; y0 += 2.0) {
    for (double x0 = 1.0; x0 + w <= image - 1.0; x0 += 2.0) {
      const BBox cand{x0, y0, x0 + w, y0 + h};
      double cover = 0.0;
      for (const Placed& p : placed) {
        cover = std::max(cover, intersection_area(cand, p.box) / cand.area());
      }
      if (cover < best_cover) {
        best_cover = cover;
        best = cand;
      }
    }
  }
  return best;
}

void fill_shape(Tensor& image, const BBox& box, bool ellipse, const std::array<double, 3>& color,
                Rng& rng) {
  const int64_t s = image.dim(1);
  const int64_t plane = s * s;
  const double cx = box.center_x(), cy = box.center_y();
  const double rx = 0.5 * box.width(), ry = 0.5 * box.height();
  const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(box.y_min)));
  const int64_t r1 = std::min<int64_t>(s, static_cast<int64_t>(std::ceil(box.y_max)));
  const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(box.x_min)));
  const int64_t c1 = std::min<int64_t>(s, static_cast<int64_t>(std::ceil(box.x_max)));
  for (int64_t r = r0; r < r1; ++r) {
    for (int64_t c = c0; c < c1; ++c) {
      const double px = c + 0.5, py = r + 0.5;
      if (px < box.x_min || px > box.x_max || py < box.y_min || py > box.y_max) continue;
      if (ellipse) {
        const double nx = (px - cx) / rx, ny = (py - cy) / ry;
        if (nx * nx + ny * ny > 1.0) continue;
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double v = color[ch] + rng.uniform(-0.045, 0.045);
        image[ch * plane + r * s + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

}  // namespace

Scene gen_synthetic_scene(const SynthConfig& cfg, int64_t index) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(index)));
  const ClassPalette palette = default_palette(cfg.num_classes);
  const double s = static_cast<double>(cfg.image_size);

  const int n = cfg.min_objects + static_cast<int>(rng.uniform_int(cfg.max_objects - cfg.min_objects + 1));

  std::vector<Placed> placed;
  std::vector<std::vector<int>> ancestors;  // per object, indexes of its support chain

  for (int i = 0; i < n; ++i) {
    const int class_id = static_cast<int>(rng.uniform_int(cfg.num_classes));

    // candidate supports must be large enough to carry a child
    std::vector<int> eligible;
    for (size_t k = 0; k < placed.size(); ++k) {
      if (placed[k].box.width() >= 17.0 && placed[k].box.height() >= 17.0) {
        eligible.push_back(static_cast<int>(k));
      }
    }

    BBox box{};
    bool done = false;
    std::vector<int> chain;

    if (!eligible.empty() && rng.bernoulli(cfg.stack_prob)) {
      // rest on an existing object, covering >= 60% of our own box
      const int j = eligible[rng.uniform_int(static_cast<int64_t>(eligible.size()))];
      const BBox& sup = placed[j].box;
      const double w = std::max(9.0, rng.uniform(0.45, 0.62) * sup.width());
      const double h = std::max(9.0, rng.uniform(0.45, 0.62) * sup.height());
      chain = ancestors[j];
      chain.push_back(j);
      std::vector<bool> ignore(placed.size(), false);
      for (int a : chain) ignore[a] = true;
      for (int attempt = 0; attempt < 40 && !done; ++attempt) {
        const double fx = rng.uniform(0.85, 1.0);
        const double fy = rng.uniform(0.85, 1.0);
        const double x0 = std::clamp(rng.uniform(sup.x_min - (1.0 - fx) * w, sup.x_max - fx * w),
                                     1.0, s - 1.0 - w);
        const double y0 = std::clamp(rng.uniform(sup.y_min - (1.0 - fy) * h, sup.y_max - fy * h),
                                     1.0, s - 1.0 - h);
        box = BBox{x0, y0, x0 + w, y0 + h};
        done = cover_fraction(box, sup) >= 0.62 && clear_of_others(box, placed, ignore);
      }
    }

    if (!done) {
      // free table placement, clear of everything already there
      chain.clear();
      double w = rng.uniform(18.0, 34.0);
      double h = rng.uniform(18.0, 34.0);
      const std::vector<bool> ignore(placed.size(), false);
      for (int round = 0; round < 2 && !done; ++round) {
        for (int attempt = 0; attempt < 60 && !done; ++attempt) {
          const double x0 = rng.uniform(1.0, s - 1.0 - w);
          const double y0 = rng.uniform(1.0, s - 1.0 - h);
          box = BBox{x0, y0, x0 + w, y0 + h};
          done = clear_of_others(box, placed, ignore);
        }
        if (!done) {
          // crowded image: shrink and retry
          w = std::max(12.0, 0.72 * w);
          h = std::max(12.0, 0.72 * h);
        }
      }
      if (!done) box = least_covered_spot(w, h, s, placed);
    }

    placed.push_back({box, class_id});
    ancestors.push_back(chain);
  }

  // Ground truth straight from the stability criterion: the parent of an
  // object is the most recently placed object covering >= 60% of its box.
  Scene scene;
  scene.annotation.image_id = [&] {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%06lld", static_cast<long long>(index));
    return std::string(buf);
  }();
  scene.annotation.image_path = "images/" + scene.annotation.image_id + ".png";
  scene.annotation.width = cfg.image_size;
  scene.annotation.height = cfg.image_size;

  std::vector<ObjectAnnotation> objects(n);
  for (int i = 0; i < n; ++i) {
    objects[i].class_name = palette.names[placed[i].class_id];
    objects[i].box = placed[i].box;
    objects[i].node_index = i;
  }
  for (int i = 0; i < n; ++i) {
    int support = -1;
    for (int k = 0; k < i; ++k) {
      if (cover_fraction(placed[i].box, placed[k].box) >= 0.6) support = k;
    }
    if (support >= 0) {
      objects[i].parent_indexes.push_back(support);
      objects[support].child_indexes.push_back(i);
    }
  }
  scene.annotation.objects = std::move(objects);
  scene.annotation.check("gen_synthetic_scene");

  // render: noisy table, then objects in placement order (later on top)
  scene.image = Tensor({3, cfg.image_size, cfg.image_size});
  const int64_t plane = cfg.image_size * cfg.image_size;
  for (int64_t p = 0; p < plane; ++p) {
    const double v = 0.16 + rng.uniform(-0.03, 0.03);
    for (int ch = 0; ch < 3; ++ch) scene.image[ch * plane + p] = std::clamp(v, 0.0, 1.0);
  }
  for (int i = 0; i < n; ++i) {
    std::array<double, 3> color = palette.colors[placed[i].class_id];
    const double jitter = rng.uniform(-0.03, 0.03);
    for (double& ch : color) ch = std::clamp(ch + jitter, 0.0, 1.0);
    fill_shape(scene.image, placed[i].box, placed[i].class_id % 2 == 1, color, rng);
  }
  return scene;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double ratio,
                                                                  uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("split ratio must be in (0, 1)");
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5eedULL));
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)));
    std::swap(order[i - 1], order[j]);
  }
  const size_t n_train = static_cast<size_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<size_t> train(order.begin(), order.begin() + n_train);
  std::vector<size_t> test(order.begin() + n_train, order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

void write_corpus(const std::string& dir, const SynthConfig& cfg, int64_t count,
                  int64_t start_index) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "annotations", ec);
  if (ec) throw IoError("cannot create corpus directories under " + dir);

  std::ofstream index_file(fs::path(dir) / "index.txt", std::ios::trunc);
  if (!index_file) throw IoError("cannot write corpus index in " + dir);
  for (int64_t i = 0; i < count; ++i) {
    const Scene scene = gen_synthetic_scene(cfg, start_index + i);
    const std::string ann_rel = "annotations/" + scene.annotation.image_id + ".json";
    write_png_rgb((fs::path(dir) / scene.annotation.image_path).string(), scene.image);
    emit_annotation(scene.annotation, (fs::path(dir) / ann_rel).string());
    index_file << ann_rel << "\n";
  }
  if (!index_file) throw IoError("failed writing corpus index in " + dir);
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream index_file(fs::path(dir) / "index.txt");
  if (!index_file) throw IoError("no corpus index at " + dir + "/index.txt");
  Corpus corpus;
  std::string line;
  while (std::getline(index_file, line)) {
    if (line.empty()) continue;
    Scene scene;
    scene.annotation = parse_annotation((fs::path(dir) / line).string());
    scene.image = read_png_rgb((fs::path(dir) / scene.annotation.image_path).string());
    if (scene.image.dim(1) != scene.annotation.height ||
        scene.image.dim(2) != scene.annotation.width) {
      throw InvalidInput(line + ": image size does not match annotation");
    }
    corpus.scenes.push_back(std::move(scene));
  }
  return corpus;
}

}  // namespace vmrn::data

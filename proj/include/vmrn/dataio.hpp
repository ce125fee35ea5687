#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vmrn/geometry.hpp"
#include "vmrn/reltree.hpp"
#include "vmrn/tensor.hpp"

namespace vmrn::data {

/// One annotated object: class, box, and its place in the manipulation tree.
struct ObjectAnnotation {
  std::string class_name;
  BBox box;
  int node_index = 0;
  std::vector<int> parent_indexes;
  std::vector<int> child_indexes;
};

/// Per-image annotation: image reference, size, and the object list whose
/// parent/child indexes encode the manipulation relationship tree.
struct SceneAnnotation {
  std::string image_id;
  std::string image_path;  // relative to the corpus root
  int64_t width = 0;
  int64_t height = 0;
  std::vector<ObjectAnnotation> objects;

  /// The manipulation tree over node indexes.
  tree::ManipulationTree tree() const;

  /// Checks node uniqueness, parent/child mutual consistency, box validity
  /// and acyclicity; throws InvalidInput naming the offending nodes.
  void check(const std::string& context = "annotation") const;
};

/// Parses one annotation file; validation failures carry the path.
SceneAnnotation parse_annotation(const std::string& path);
SceneAnnotation parse_annotation_text(const std::string& text, const std::string& context);

/// Byte-stable emission; parse(emit(s)) == s and re-emission is identical.
void emit_annotation(const SceneAnnotation& scene, const std::string& path);
std::string annotation_to_text(const SceneAnnotation& scene);

/// Class palette: names plus distinct base colors for synthetic rendering.
struct ClassPalette {
  std::vector<std::string> names;
  std::vector<std::array<double, 3>> colors;

  int id_of(const std::string& name) const;  // throws on unknown class
  int size() const { return static_cast<int>(names.size()); }
};

/// First `num_classes` entries of the built-in palette (procedural colors
/// past the curated 16, up to 64 classes).
ClassPalette default_palette(int num_classes);

struct SynthConfig {
  int min_objects = 2;
  int max_objects = 5;
  int num_classes = 10;
  int64_t image_size = 64;
  double stack_prob = 0.55;
  uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  Tensor image;  // [3, S, S] in [0, 1]
  SceneAnnotation annotation;
};

/// Renders scene `index` of the virtual corpus defined by cfg: flat-shaded
/// noisy rectangles/ellipses on a table, some stacked. A stacked object
/// overlaps its support by >= 60% of its own box area and becomes that
/// object's child; everything else stays clear of other objects, so the
/// stability criterion determines the tree exactly. Deterministic in
/// (cfg.seed, index).
Scene gen_synthetic_scene(const SynthConfig& cfg, int64_t index);

/// Seeded shuffle, then floor(ratio * n) items for the first split.
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double ratio,
                                                                  uint64_t seed);

struct Corpus {
  std::vector<Scene> scenes;
};

/// Generates `count` scenes starting at `start_index` and writes
/// dir/images/*.png, dir/annotations/*.json and dir/index.txt.
void write_corpus(const std::string& dir, const SynthConfig& cfg, int64_t count,
                  int64_t start_index = 0);

/// Loads every scene named by dir/index.txt.
Corpus load_corpus(const std::string& dir);

}  // namespace vmrn::data

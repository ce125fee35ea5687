#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vmrn/dataio.hpp"
#include "vmrn/eval.hpp"
#include "vmrn/gradcheck.hpp"
#include "vmrn/model.hpp"
#include "vmrn/op2l.hpp"
#include "vmrn/pipeline.hpp"
#include "vmrn/render.hpp"
#include "vmrn/reltree.hpp"

namespace py = pybind11;
using namespace vmrn;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<int64_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
  Tensor t(shape);
  std::copy(arr.data(), arr.data() + arr.size(), t.data());
  return t;
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::copy(t.data(), t.data() + t.numel(), arr.mutable_data());
  return arr;
}

BBox to_box(const std::array<double, 4>& b) { return BBox{b[0], b[1], b[2], b[3]}; }

std::array<double, 4> from_box(const BBox& b) { return {b.x_min, b.y_min, b.x_max, b.y_max}; }

tree::ManipulationTree make_tree(const std::vector<int>& nodes,
                                 const std::vector<std::tuple<int, int, double>>& edges) {
  tree::ManipulationTree t;
  t.nodes = nodes;
  for (const auto& [p, c, conf] : edges) t.edges.push_back({p, c, conf});
  return t;
}

py::dict prediction_dict(const ImagePrediction& pred, const data::ClassPalette& palette) {
  py::list detections;
  for (const auto& d : pred.detections) {
    py::dict item;
    item["bbox"] = from_box(d.box);
    item["cls"] = d.cls;
    item["class_name"] = palette.names.at(static_cast<size_t>(d.cls));
    item["conf"] = d.score();
    detections.append(item);
  }
  py::list rels;
  for (const auto& [pair, probs] : pred.rel_probs) {
    py::dict item;
    item["subj_idx"] = pair.first;
    item["obj_idx"] = pair.second;
    item["probs"] = probs;
    rels.append(item);
  }
  py::list edges;
  if (!pred.detections.empty()) {
    for (const auto& e : tree_from_prediction(pred).edges) {
      edges.append(py::make_tuple(e.parent, e.child, e.confidence));
    }
  }
  py::dict out;
  out["detections"] = detections;
  out["rels"] = rels;
  out["tree_edges"] = edges;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Object detection plus manipulation-relationship trees (grasping order)";

  // geometry
  m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) {
    return iou(to_box(a), to_box(b));
  });
  m.def("union_box", [](std::array<double, 4> a, std::array<double, 4> b) {
    return from_box(union_box(to_box(a), to_box(b)));
  });
  m.def("encode_offsets", [](std::array<double, 4> b, std::array<double, 4> d) {
    const OffsetVector o = encode_offsets(to_box(b), to_box(d));
    return std::array<double, 4>{o.dx, o.dy, o.dw, o.dh};
  });
  m.def("decode_offsets", [](std::array<double, 4> o, std::array<double, 4> d) {
    return from_box(decode_offsets(OffsetVector{o[0], o[1], o[2], o[3]}, to_box(d)));
  });

  // relationship trees; labels are 1 = parent-of, 2 = child-of, 3 = no-rel
  m.def("reconcile", [](tree::Prob3 p_ij, tree::Prob3 p_ji) {
    const auto r = tree::reconcile(p_ij, p_ji);
    return py::make_tuple(static_cast<int>(r.label), r.confidence);
  });
  m.def("build_tree", [](const std::vector<int>& ids,
                         const std::map<std::pair<int, int>, tree::Prob3>& scores) {
    std::vector<std::tuple<int, int, double>> edges;
    for (const auto& e : tree::build_tree(ids, scores).edges) {
      edges.emplace_back(e.parent, e.child, e.confidence);
    }
    return edges;
  });
  m.def("leaf_nodes", [](const std::vector<int>& nodes,
                         const std::vector<std::tuple<int, int, double>>& edges) {
    return tree::leaf_nodes(make_tree(nodes, edges));
  });
  m.def("tree_to_labels", [](const std::vector<int>& nodes,
                             const std::vector<std::tuple<int, int, double>>& edges) {
    std::map<std::pair<int, int>, int> out;
    for (const auto& [pair, label] : tree::tree_to_labels(make_tree(nodes, edges))) {
      out[pair] = static_cast<int>(label);
    }
    return out;
  });
  m.def("validate_tree", [](const std::vector<int>& nodes,
                            const std::vector<std::tuple<int, int, double>>& edges) {
    std::vector<std::string> out;
    for (const auto& v : tree::validate(make_tree(nodes, edges))) out.push_back(v.detail);
    return out;
  });
  m.def("tree_dot", [](const std::vector<int>& nodes,
                       const std::vector<std::tuple<int, int, double>>& edges,
                       const std::map<int, std::string>& names) {
    return tree::to_dot(make_tree(nodes, edges), names);
  }, py::arg("nodes"), py::arg("edges"), py::arg("names") = std::map<int, std::string>{});

  // pairing layer
  m.def("enumerate_pairs", [](const std::vector<std::array<double, 4>>& boxes) {
    std::vector<BBox> bb;
    for (const auto& b : boxes) bb.push_back(to_box(b));
    std::vector<std::pair<int, int>> out;
    for (const auto& p : op2l::enumerate_pairs(bb)) {
      out.emplace_back(p.subject_index, p.object_index);
    }
    return out;
  });
  m.def("adaptive_maxpool",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& features,
           int64_t out_h, int64_t out_w) {
          return to_array(ad::adaptive_maxpool2d(ad::leaf(to_tensor(features)), out_h, out_w)->value);
        });
  m.def("crop_pool",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& features,
           std::array<double, 4> box, double image_size, int64_t out_hw) {
          return to_array(op2l::crop_pool(ad::leaf(to_tensor(features)), to_box(box), image_size,
                                          out_hw)->value);
        });

  // data
  m.def("class_names", [](int num_classes) { return data::default_palette(num_classes).names; });
  m.def("gen_scene",
        [](uint64_t seed, int64_t index, int num_classes, int64_t image_size, double stack_prob,
           int min_objects, int max_objects) {
          data::SynthConfig cfg;
          cfg.seed = seed;
          cfg.num_classes = num_classes;
          cfg.image_size = image_size;
          cfg.stack_prob = stack_prob;
          cfg.min_objects = min_objects;
          cfg.max_objects = max_objects;
          const data::Scene scene = data::gen_synthetic_scene(cfg, index);
          return py::make_tuple(to_array(scene.image),
                                data::annotation_to_text(scene.annotation));
        },
        py::arg("seed"), py::arg("index"), py::arg("num_classes") = 10,
        py::arg("image_size") = 64, py::arg("stack_prob") = 0.55, py::arg("min_objects") = 2,
        py::arg("max_objects") = 5);
  m.def("write_corpus",
        [](const std::string& dir, int64_t count, uint64_t seed, int64_t start, int num_classes) {
          data::SynthConfig cfg;
          cfg.seed = seed;
          cfg.num_classes = num_classes;
          data::write_corpus(dir, cfg, count, start);
        },
        py::arg("dir"), py::arg("count"), py::arg("seed") = 0, py::arg("start_index") = 0,
        py::arg("num_classes") = 10);
  m.def("annotation_tree", [](const std::string& json_text) {
    const auto scene = data::parse_annotation_text(json_text, "<python>");
    std::vector<std::tuple<int, int>> edges;
    for (const auto& e : scene.tree().edges) edges.emplace_back(e.parent, e.child);
    return edges;
  });

  // training and inference
  m.def("train",
        [](const std::string& data_dir, const std::string& out_dir, const std::string& config_path,
           int64_t seed, int64_t max_iters) {
          pipeline::TrainConfig cfg;
          if (!config_path.empty()) cfg = pipeline::TrainConfig::from_file(config_path);
          if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
          if (max_iters > 0) {
            cfg.max_iters = max_iters;
            cfg.pretrain_iters = std::min(cfg.pretrain_iters, max_iters / 2);
          }
          const auto result = pipeline::train(data_dir, cfg, out_dir);
          py::dict out;
          out["rel_accuracy"] = result.report.rel_accuracy;
          out["obj_recall"] = result.report.obj_recall;
          out["obj_precision"] = result.report.obj_precision;
          out["img_accuracy"] = result.report.img_accuracy;
          out["map"] = result.report.map;
          out["checkpoint"] = result.checkpoint_path;
          out["iterations"] = static_cast<int64_t>(result.history.size());
          return out;
        },
        py::arg("data_dir"), py::arg("out_dir"), py::arg("config") = std::string{},
        py::arg("seed") = -1, py::arg("max_iters") = -1);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& path) { return load_model(path); }), py::arg("path"))
      .def_property_readonly("num_classes",
                             [](const Model& m_) { return m_.config().num_classes; })
      .def_property_readonly("image_size", [](const Model& m_) { return m_.config().image_size; })
      .def("predict",
           [](const Model& model,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
             const auto palette =
                 data::default_palette(static_cast<int>(model.config().num_classes));
             return prediction_dict(predict_scene(model, to_tensor(image)), palette);
           })
      .def("rel_probs",
           [](const Model& model,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
              const std::vector<std::array<double, 4>>& boxes) {
             std::vector<BBox> bb;
             for (const auto& b : boxes) bb.push_back(to_box(b));
             std::map<std::pair<int, int>, tree::Prob3> out;
             for (const auto& [pair, probs] : rel_probs_for_boxes(model, to_tensor(image), bb)) {
               out[pair] = probs;
             }
             return out;
           });

  m.def("evaluate", [](const std::string& model_path, const std::string& data_dir) {
    const Model model = load_model(model_path);
    const auto palette = data::default_palette(static_cast<int>(model.config().num_classes));
    const auto scenes = data::load_corpus(data_dir).scenes;
    const auto report = metrics::evaluate(model, scenes, palette);
    py::dict out;
    out["rel_accuracy"] = report.rel_accuracy;
    out["obj_recall"] = report.obj_recall;
    out["obj_precision"] = report.obj_precision;
    out["img_accuracy"] = report.img_accuracy;
    out["map"] = report.map;
    return out;
  });

  m.def("gradient_checks",
        [](const std::string& layer, int seeds) {
          std::vector<std::pair<std::string, double>> out;
          for (const auto& c : ad::run_gradient_checks(layer, seeds)) {
            out.emplace_back(c.layer, c.max_rel_error);
          }
          return out;
        },
        py::arg("layer") = std::string{}, py::arg("seeds") = 5);

  py::register_exception<IoError>(m, "IoError");
  py::register_exception<InvalidInput>(m, "InvalidInput");
}

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vmrn/dataio.hpp"
#include "vmrn/eval.hpp"
#include "vmrn/gradcheck.hpp"
#include "vmrn/model.hpp"
#include "vmrn/pipeline.hpp"
#include "vmrn/png_io.hpp"
#include "vmrn/render.hpp"

namespace fs = std::filesystem;
using namespace vmrn;

namespace {

int run_synth(const std::string& out_dir, int64_t count, uint64_t seed, int64_t start,
              const data::SynthConfig& base) {
  data::SynthConfig cfg = base;
  cfg.seed = seed;
  data::write_corpus(out_dir, cfg, count, start);
  std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, int64_t seed, bool paper_scale) {
  pipeline::TrainConfig cfg;
  if (!config_path.empty()) cfg = pipeline::TrainConfig::from_file(config_path);
  if (paper_scale) cfg.apply_paper_scale();
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);

  const auto result = pipeline::train(data_dir, cfg, out_dir);
  std::cout << "trained " << result.history.size() << " iterations\n"
            << "checkpoint: " << result.checkpoint_path << "\n"
            << "held-out metrics:\n"
            << "  Rel.      " << result.report.rel_accuracy << "\n"
            << "  Obj.Rec.  " << result.report.obj_recall << "\n"
            << "  Obj.Prec. " << result.report.obj_precision << "\n"
            << "  Img.      " << result.report.img_accuracy << "\n"
            << "  mAP       " << result.report.map << "\n";
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_dir, const std::string& metric,
             const std::string& dump_path) {
  const Model model = load_model(model_path);
  const auto palette = data::default_palette(static_cast<int>(model.config().num_classes));

  // evaluate on the corpus as given: explicit test/ subdirectory when
  // present, the whole index otherwise
  std::vector<data::Scene> scenes;
  if (fs::exists(fs::path(data_dir) / "test" / "index.txt")) {
    scenes = data::load_corpus((fs::path(data_dir) / "test").string()).scenes;
  } else {
    scenes = data::load_corpus(data_dir).scenes;
  }
  if (scenes.empty()) throw InvalidInput("eval: no scenes found in " + data_dir);

  std::vector<metrics::ImageRecord> records;
  std::vector<const data::SceneAnnotation*> gts;
  for (const auto& scene : scenes) {
    records.push_back(
        metrics::to_record(scene.annotation.image_id, predict_scene(model, scene.image)));
    gts.push_back(&scene.annotation);
  }

  if (!dump_path.empty()) {
    std::ofstream os(dump_path, std::ios::trunc);
    if (!os) throw IoError("cannot write dump: " + dump_path);
    for (const auto& rec : records) os << metrics::dump_jsonl(rec);
  }

  nlohmann::ordered_json out;
  if (metric == "rel" || metric == "all") {
    const auto rel = metrics::eval_rel(model, scenes);
    out["rel_accuracy"] = rel.accuracy;
  }
  if (metric == "obj" || metric == "all") {
    const auto obj = metrics::eval_object(records, gts, palette);
    out["obj_recall"] = obj.recall;
    out["obj_precision"] = obj.precision;
  }
  if (metric == "img" || metric == "all") {
    out["img_accuracy"] = metrics::eval_image(records, gts, palette).accuracy;
  }
  if (metric == "map" || metric == "all") {
    const auto map = metrics::eval_map(records, gts, palette);
    out["map"] = map.map;
    for (int cls : map.skipped_classes) {
      std::cerr << "warning: class " << palette.names.at(static_cast<size_t>(cls))
                << " predicted but absent from ground truth; skipped\n";
    }
  }
  if (metric == "all") {
    const auto report = metrics::evaluate(model, scenes, palette);
    std::cout << report.to_json(palette);
  } else {
    std::cout << out.dump(2) << "\n";
  }
  return 0;
}

int run_predict(const std::string& model_path, const std::string& image_path,
                const std::string& out_json, const std::string& out_dot,
                const std::string& out_png) {
  const Model model = load_model(model_path);
  const auto palette = data::default_palette(static_cast<int>(model.config().num_classes));
  const Tensor image = read_png_rgb(image_path);
  const ImagePrediction pred = predict_scene(model, image);

  const std::string image_id = fs::path(image_path).stem().string();
  {
    std::ofstream os(out_json, std::ios::trunc);
    if (!os) throw IoError("cannot write " + out_json);
    os << metrics::dump_jsonl(metrics::to_record(image_id, pred));
  }
  std::cout << pred.detections.size() << " detections";
  if (!pred.detections.empty()) {
    const auto t = tree_from_prediction(pred);
    std::cout << ", " << t.edges.size() << " relation edges";
    if (!out_dot.empty()) {
      std::map<int, std::string> names;
      for (size_t i = 0; i < pred.detections.size(); ++i) {
        names[static_cast<int>(i)] =
            palette.names.at(static_cast<size_t>(pred.detections[i].cls)) + "_" +
            std::to_string(i);
      }
      std::ofstream os(out_dot, std::ios::trunc);
      if (!os) throw IoError("cannot write " + out_dot);
      os << tree::to_dot(t, names);
    }
  } else if (!out_dot.empty()) {
    std::ofstream os(out_dot, std::ios::trunc);
    os << tree::to_dot(tree::ManipulationTree{});
  }
  std::cout << "\n";
  if (!out_png.empty()) {
    write_png_rgb(out_png, render::annotate_prediction(image, pred, palette));
  }
  return 0;
}

int run_gradcheck(const std::string& layer) {
  const auto checks = ad::run_gradient_checks(layer);
  bool ok = true;
  for (const auto& c : checks) {
    const bool pass = c.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-22s max rel err %.3e over %d seeds  %s\n", c.layer.c_str(), c.max_rel_error,
                c.seeds, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual manipulation relationship network: detection plus grasping-order trees"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic stacked-object corpus");
  std::string synth_out;
  int64_t synth_count = 100;
  uint64_t synth_seed = 0;
  int64_t synth_start = 0;
  data::SynthConfig synth_cfg;
  synth->add_option("--out", synth_out, "Output corpus directory")->required();
  synth->add_option("--count", synth_count, "Number of scenes")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--start-index", synth_start, "First scene index");
  synth->add_option("--classes", synth_cfg.num_classes, "Palette size");
  synth->add_option("--image-size", synth_cfg.image_size, "Image side in pixels");
  synth->add_option("--min-objects", synth_cfg.min_objects, "Fewest objects per scene");
  synth->add_option("--max-objects", synth_cfg.max_objects, "Most objects per scene");
  synth->add_option("--stack-prob", synth_cfg.stack_prob, "Chance each object stacks");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a corpus");
  std::string train_data, train_config, train_out;
  int64_t train_seed = -1;
  bool paper_scale = false;
  train->add_option("--data", train_data, "Corpus directory")->required();
  train->add_option("--config", train_config, "Key = value training config");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--seed", train_seed, "Override the config seed");
  train->add_flag("--paper-scale", paper_scale, "Full-scale settings (slow)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  std::string eval_model, eval_data, eval_metric = "all", eval_dump;
  eval->add_option("--model", eval_model, "Checkpoint path")->required();
  eval->add_option("--data", eval_data, "Corpus directory")->required();
  eval->add_option("--metric", eval_metric, "rel|obj|img|map|all")
      ->check(CLI::IsMember({"rel", "obj", "img", "map", "all"}));
  eval->add_option("--dump", eval_dump, "Write prediction dump (JSON lines)");

  // predict
  auto* predict = app.add_subcommand("predict", "Run one image through the model");
  std::string pred_model, pred_image, pred_json, pred_dot, pred_png;
  predict->add_option("--model", pred_model, "Checkpoint path")->required();
  predict->add_option("--image", pred_image, "Input PNG")->required();
  predict->add_option("--out-json", pred_json, "Detections and relations (JSON lines)")->required();
  predict->add_option("--out-dot", pred_dot, "Manipulation tree as DOT");
  predict->add_option("--out-png", pred_png, "Annotated image");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every layer");
  std::string gc_layer;
  gradcheck->add_option("--layer", gc_layer, "Only this layer");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_out, synth_count, synth_seed, synth_start, synth_cfg);
    if (*train) return run_train(train_data, train_config, train_out, train_seed, paper_scale);
    if (*eval) return run_eval(eval_model, eval_data, eval_metric, eval_dump);
    if (*predict) return run_predict(pred_model, pred_image, pred_json, pred_dot, pred_png);
    if (*gradcheck) return run_gradcheck(gc_layer);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "vmrn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vmrn/op2l.hpp"

namespace vmrn::pipeline {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  sgd.validate();
  if (lambda < 0.0 || lambda > 1.0) throw InvalidInput("train: lambda must be in [0, 1]");
  if (mu < 0.0 || mu > 1.0) throw InvalidInput("train: mu must be in [0, 1]");
  if (alpha < 0.0) throw InvalidInput("train: alpha must be >= 0");
  if (pretrain_iters < 0 || pretrain_iters >= max_iters) {
    throw InvalidInput("train: need 0 <= pretrain_iters < max_iters");
  }
  if (iter_scale < 1) throw InvalidInput("train: iter_scale must be >= 1");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw InvalidInput("train: split_ratio in (0, 1)");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw InvalidInput("train: flip_prob must be in [0, 1]");
  model.validate();
}

void TrainConfig::finalize() {
  if (sgd.schedule.empty()) {
    sgd.schedule[0] = sgd.learning_rate;
    sgd.schedule[80000 / iter_scale] = sgd.learning_rate * 0.1;
  }
}

void TrainConfig::apply_paper_scale() {
  iter_scale = 1;
  pretrain_iters = 10000;
  max_iters = 120000;
  checkpoint_every = 10000;
  model.image_size = 304;
  model.feature_channels = 512;
  sgd.schedule.clear();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_double_list(const std::string& value, const std::string& context) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ParseError(context + ": not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw ParseError(context + ": empty list");
  return out;
}

}  // namespace

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);

  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string context = path + ":" + std::to_string(line_no);

    auto as_double = [&] {
      try {
        return std::stod(value);
      } catch (const std::exception&) {
        throw ParseError(context + ": not a number: '" + value + "'");
      }
    };
    auto as_int = [&] {
      try {
        return static_cast<int64_t>(std::stoll(value));
      } catch (const std::exception&) {
        throw ParseError(context + ": not an integer: '" + value + "'");
      }
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw ParseError(context + ": not a boolean: '" + value + "'");
    };

    if (key == "learning_rate") cfg.sgd.learning_rate = as_double();
    else if (key == "weight_decay") cfg.sgd.weight_decay = as_double();
    else if (key == "momentum") cfg.sgd.momentum = as_double();
    else if (key == "nesterov") cfg.sgd.nesterov = as_bool();
    else if (key == "batch_size") cfg.sgd.batch_size = as_int();
    else if (key == "lambda") cfg.lambda = as_double();
    else if (key == "mu") cfg.mu = as_double();
    else if (key == "alpha") cfg.alpha = as_double();
    else if (key == "pretrain_iters") cfg.pretrain_iters = as_int();
    else if (key == "max_iters") cfg.max_iters = as_int();
    else if (key == "iter_scale") cfg.iter_scale = as_int();
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(as_int());
    else if (key == "split_ratio") cfg.split_ratio = as_double();
    else if (key == "checkpoint_every") cfg.checkpoint_every = as_int();
    else if (key == "rel_mean_reduction") cfg.rel_mean_reduction = as_bool();
    else if (key == "flip_prob") cfg.flip_prob = as_double();
    else if (key == "image_size") cfg.model.image_size = as_int();
    else if (key == "feature_channels") cfg.model.feature_channels = as_int();
    else if (key == "num_classes") cfg.model.num_classes = as_int();
    else if (key == "pool_hw") cfg.model.pool_hw = as_int();
    else if (key == "rel_hidden") cfg.model.rel_hidden = as_int();
    else if (key == "conf_threshold") cfg.model.conf_threshold = as_double();
    else if (key == "nms_iou") cfg.model.nms_iou = as_double();
    else if (key == "max_detections") cfg.model.max_detections = as_int();
    else if (key == "box_scales") cfg.model.box_scales = parse_double_list(value, context);
    else if (key == "box_ratios") cfg.model.box_ratios = parse_double_list(value, context);
    else throw ParseError(context + ": unknown key '" + key + "'");
  }
  return cfg;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "learning_rate = " << sgd.learning_rate << "\n";
  os << "weight_decay = " << sgd.weight_decay << "\n";
  os << "momentum = " << sgd.momentum << "\n";
  os << "nesterov = " << (sgd.nesterov ? "true" : "false") << "\n";
  os << "batch_size = " << sgd.batch_size << "\n";
  os << "lambda = " << lambda << "\n";
  os << "mu = " << mu << "\n";
  os << "alpha = " << alpha << "\n";
  os << "pretrain_iters = " << pretrain_iters << "\n";
  os << "max_iters = " << max_iters << "\n";
  os << "iter_scale = " << iter_scale << "\n";
  os << "seed = " << seed << "\n";
  os << "split_ratio = " << split_ratio << "\n";
  os << "checkpoint_every = " << checkpoint_every << "\n";
  os << "rel_mean_reduction = " << (rel_mean_reduction ? "true" : "false") << "\n";
  os << "flip_prob = " << flip_prob << "\n";
  os << "image_size = " << model.image_size << "\n";
  os << "feature_channels = " << model.feature_channels << "\n";
  os << "num_classes = " << model.num_classes << "\n";
  os << "pool_hw = " << model.pool_hw << "\n";
  os << "rel_hidden = " << model.rel_hidden << "\n";
  os << "conf_threshold = " << model.conf_threshold << "\n";
  os << "nms_iou = " << model.nms_iou << "\n";
  os << "max_detections = " << model.max_detections << "\n";
  os << "box_scales = ";
  for (size_t i = 0; i < model.box_scales.size(); ++i) {
    os << (i ? "," : "") << model.box_scales[i];
  }
  os << "\nbox_ratios = ";
  for (size_t i = 0; i < model.box_ratios.size(); ++i) {
    os << (i ? "," : "") << model.box_ratios[i];
  }
  os << "\n";
  return os.str();
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_([&] {
        TrainConfig c = cfg;
        c.finalize();
        c.validate();
        return c;
      }()),
      rng_(cfg_.seed),
      model_(cfg_.model, rng_),
      palette_(data::default_palette(static_cast<int>(cfg_.model.num_classes))) {}

Trainer::Trainer(const TrainConfig& cfg, const std::string& checkpoint_path) : Trainer(cfg) {
  const NamedTensors entries = read_checkpoint(checkpoint_path);
  NamedTensors params;
  std::map<std::string, Tensor> velocity;
  int64_t iter = -1;
  int64_t draws = -1;
  for (const auto& [name, tensor] : entries) {
    if (name.starts_with("opt.v.")) {
      velocity[name.substr(6)] = tensor;
    } else if (name == "meta.iteration") {
      iter = static_cast<int64_t>(tensor[0]);
    } else if (name == "meta.rng_draws") {
      draws = static_cast<int64_t>(tensor[0]);
    } else if (!name.starts_with("meta.")) {
      params.emplace_back(name, tensor);
    }
  }
  if (iter < 0 || draws < 0) throw ParseError(checkpoint_path + ": missing training metadata");
  model_.load_state(params);
  velocity_ = std::move(velocity);
  iteration_ = iter;
  rng_ = Rng::resumed(cfg_.seed, static_cast<uint64_t>(draws));
}

void Trainer::save_checkpoint(const std::string& path) const {
  NamedTensors entries = model_.state_dict();
  for (const auto& [name, var] : model_.params()) {
    auto it = velocity_.find(name);
    entries.emplace_back("opt.v." + name,
                         it == velocity_.end() ? Tensor(var->value.shape()) : it->second);
  }
  entries.emplace_back("meta.iteration", Tensor({1}, {static_cast<double>(iteration_)}));
  entries.emplace_back("meta.rng_draws", Tensor({1}, {static_cast<double>(rng_.draws())}));
  append_config_entries(entries, cfg_.model);
  write_checkpoint(path, entries);
}

data::Scene flip_scene(const data::Scene& scene) {
  data::Scene out;
  out.annotation = scene.annotation;
  const int64_t w = scene.image.dim(2);
  const double width = static_cast<double>(scene.annotation.width);
  for (auto& obj : out.annotation.objects) {
    const BBox b = obj.box;
    obj.box = BBox{width - b.x_max, b.y_min, width - b.x_min, b.y_max};
  }
  out.image = Tensor(scene.image.shape());
  const int64_t planes = scene.image.dim(0) * scene.image.dim(1);
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = scene.image.data() + p * w;
    double* dst = out.image.data() + p * w;
    for (int64_t c = 0; c < w; ++c) dst[c] = src[w - 1 - c];
  }
  return out;
}

namespace {

ad::Var mean_of(std::vector<ad::Var> terms, int64_t count) {
  ad::Var total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 1.0 / static_cast<double>(count));
}

void require_finite(double v, const char* term, int64_t iteration) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("non-finite ") + term + " at iteration " +
                        std::to_string(iteration));
  }
}

}  // namespace

StepReport Trainer::train_step(const std::vector<const data::Scene*>& batch,
                               StepDiagnostics* diag) {
  if (batch.empty()) throw InvalidInput("train_step: empty batch");
  const int64_t b_count = static_cast<int64_t>(batch.size());
  const int64_t s = cfg_.model.image_size;
  const int64_t d_count = cfg_.model.num_defaults();
  const auto& defaults = model_.default_boxes();
  const bool joint = iteration_ >= cfg_.pretrain_iters;

  Tensor images({b_count, 3, s, s});
  for (int64_t n = 0; n < b_count; ++n) {
    const Tensor& img = batch[n]->image;
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != s || img.dim(2) != s) {
      throw ShapeError("train_step: image " + shape_string(img.shape()) + " does not match model " +
                       std::to_string(s));
    }
    std::copy(img.data(), img.data() + img.numel(), images.data() + n * img.numel());
  }

  auto input = ad::leaf(std::move(images));
  auto feat = model_.features(input);
  auto raw = model_.detect_raw(feat);

  // detector loss, per image then batch mean
  std::vector<ad::Var> od_terms;
  double loc_sum = 0.0, conf_sum = 0.0;
  for (int64_t n = 0; n < b_count; ++n) {
    const auto& ann = batch[n]->annotation;
    std::vector<BBox> gt_boxes;
    std::vector<int> gt_classes;
    for (const auto& obj : ann.objects) {
      gt_boxes.push_back(obj.box);
      gt_classes.push_back(palette_.id_of(obj.class_name));
    }
    const auto assignment = det::match_defaults(defaults, gt_boxes);
    auto parts = det::detection_loss(raw.loc, raw.conf, n * d_count, defaults, gt_boxes, gt_classes,
                                     assignment, cfg_.model.num_classes, cfg_.alpha);
    loc_sum += parts.loc->value[0];
    conf_sum += parts.conf->value[0];
    od_terms.push_back(parts.total);
  }
  auto l_od = mean_of(std::move(od_terms), b_count);

  // relation branch (joint phase only)
  ad::Var l_rp;
  bool has_rp = false;
  double on_sum = 0.0, off_sum = 0.0;
  if (joint) {
    const auto head = model_.rel_head();
    const double image_size = static_cast<double>(s);
    std::vector<ad::Var> rp_terms;
    for (int64_t n = 0; n < b_count; ++n) {
      const auto& ann = batch[n]->annotation;
      auto feat_n = ad::slice_image(feat, n);
      std::vector<ad::Var> image_terms;

      // offline pairs from ground truth boxes
      if (ann.objects.size() >= 2) {
        std::vector<BBox> boxes;
        for (const auto& obj : ann.objects) boxes.push_back(obj.box);
        const auto pairs = op2l::enumerate_pairs(boxes);
        const auto labels = tree::tree_to_labels(ann.tree());
        std::vector<int64_t> targets;
        for (const auto& p : pairs) {
          targets.push_back(tree::label_index(labels.at(
              {ann.objects[p.subject_index].node_index, ann.objects[p.object_index].node_index})));
        }
        const auto pair_batch = op2l::assemble_batch(feat_n, pairs, image_size, cfg_.model.pool_hw);
        auto l_off = ad::softmax_ce_sum(rel::forward_logits(head, pair_batch.features), targets);
        if (cfg_.rel_mean_reduction) l_off = ad::scale(l_off, 1.0 / static_cast<double>(pairs.size()));
        off_sum += l_off->value[0];
        image_terms.push_back(ad::scale(l_off, 1.0 - cfg_.lambda));
      }

      // online pairs from the detector's own boxes
      Tensor loc_n({d_count, 4});
      Tensor conf_n({d_count, cfg_.model.num_classes + 1});
      std::copy(raw.loc->value.data() + n * d_count * 4,
                raw.loc->value.data() + (n + 1) * d_count * 4, loc_n.data());
      std::copy(raw.conf->value.data() + n * d_count * (cfg_.model.num_classes + 1),
                raw.conf->value.data() + (n + 1) * d_count * (cfg_.model.num_classes + 1),
                conf_n.data());
      const auto detections = det::decode_detections(loc_n, conf_n, defaults,
                                                     cfg_.model.num_classes,
                                                     cfg_.model.decode_config());
      const auto samples = rel::assign_online_labels(detections, ann);
      if (!samples.empty()) {
        std::vector<op2l::ObjectPair> pairs;
        std::vector<int64_t> targets;
        for (const auto& sm : samples) {
          const BBox& sb = detections[static_cast<size_t>(sm.subject_detection)].box;
          const BBox& ob = detections[static_cast<size_t>(sm.object_detection)].box;
          pairs.push_back(op2l::ObjectPair{sm.subject_detection, sm.object_detection, sb, ob,
                                           union_box(sb, ob)});
          targets.push_back(tree::label_index(sm.label));
        }
        const auto pair_batch = op2l::assemble_batch(feat_n, pairs, image_size, cfg_.model.pool_hw);
        auto l_on = ad::softmax_ce_sum(rel::forward_logits(head, pair_batch.features), targets);
        if (cfg_.rel_mean_reduction) l_on = ad::scale(l_on, 1.0 / static_cast<double>(pairs.size()));
        on_sum += l_on->value[0];
        image_terms.push_back(ad::scale(l_on, cfg_.lambda));
      }

      if (!image_terms.empty()) {
        ad::Var term = image_terms[0];
        for (size_t t = 1; t < image_terms.size(); ++t) term = ad::add(term, image_terms[t]);
        rp_terms.push_back(term);
      }
    }
    if (!rp_terms.empty()) {
      l_rp = mean_of(std::move(rp_terms), b_count);
      has_rp = true;
    }
  }

  const int64_t iter = iteration_;
  require_finite(loc_sum, "L_loc", iter);
  require_finite(conf_sum, "L_conf", iter);
  require_finite(l_od->value[0], "L_OD", iter);
  require_finite(on_sum, "L_RP_on", iter);
  require_finite(off_sum, "L_RP_off", iter);
  if (has_rp) require_finite(l_rp->value[0], "L_RP", iter);

  // two backward passes; omega and theta take their own loss, phi the mix
  std::map<std::string, Tensor> grad_od, grad_rp;
  ad::backward(l_od);
  for (const auto& [name, var] : model_.params()) {
    if (Model::is_phi(name) || Model::is_omega(name)) grad_od[name] = var->grad;
  }
  if (has_rp) {
    ad::backward(l_rp);
    for (const auto& [name, var] : model_.params()) {
      if (Model::is_phi(name) || Model::is_theta(name)) grad_rp[name] = var->grad;
    }
  }

  if (diag) {
    diag->relation_branch_ran = has_rp;
    for (const auto& [name, var] : model_.params()) {
      if (!Model::is_phi(name)) continue;
      diag->phi_grad_detector[name] = grad_od.at(name);
      diag->phi_grad_relation[name] = has_rp ? grad_rp.at(name) : Tensor(var->value.shape());
    }
  }

  for (auto& [name, var] : model_.params()) {
    Tensor grad;
    if (Model::is_omega(name)) {
      grad = grad_od.at(name);
    } else if (Model::is_theta(name)) {
      if (!has_rp) continue;  // pretrain phase: theta stays bit-identical
      grad = grad_rp.at(name);
    } else if (!joint) {
      grad = grad_od.at(name);
    } else {
      // Eq.-6 mixture on the shared layers
      const Tensor& g_od = grad_od.at(name);
      grad = Tensor(g_od.shape());
      if (has_rp) {
        const Tensor& g_rp = grad_rp.at(name);
        for (int64_t i = 0; i < grad.numel(); ++i) {
          grad[i] = cfg_.mu * g_od[i] + (1.0 - cfg_.mu) * g_rp[i];
        }
      } else {
        for (int64_t i = 0; i < grad.numel(); ++i) grad[i] = cfg_.mu * g_od[i];
      }
    }
    Tensor& vel = velocity_[name];
    ad::sgd_step(var->value, grad, vel, cfg_.sgd, iter);
    var->value.round_to_f32();
    vel.round_to_f32();
  }

  ++iteration_;

  StepReport report;
  report.iteration = iter;
  report.l_od = l_od->value[0];
  report.l_loc = loc_sum / static_cast<double>(b_count);
  report.l_conf = conf_sum / static_cast<double>(b_count);
  report.l_rp_on = on_sum / static_cast<double>(b_count);
  report.l_rp_off = off_sum / static_cast<double>(b_count);
  report.l_rp = has_rp ? l_rp->value[0] : 0.0;
  report.total = combined_loss(report.l_od, report.l_rp, cfg_.mu);
  return report;
}

StepReport Trainer::sample_and_step(const std::vector<data::Scene>& train_set) {
  if (train_set.empty()) throw InvalidInput("sample_and_step: empty training set");
  std::vector<data::Scene> storage;
  std::vector<const data::Scene*> batch;
  storage.reserve(static_cast<size_t>(cfg_.sgd.batch_size));
  for (int64_t b = 0; b < cfg_.sgd.batch_size; ++b) {
    const auto idx = static_cast<size_t>(rng_.uniform_int(static_cast<int64_t>(train_set.size())));
    if (rng_.bernoulli(cfg_.flip_prob)) {
      storage.push_back(flip_scene(train_set[idx]));
    } else {
      batch.push_back(&train_set[idx]);
      continue;
    }
    batch.push_back(&storage.back());
  }
  return train_step(batch);
}

std::pair<std::vector<data::Scene>, std::vector<data::Scene>> load_split(
    const std::string& data_dir, double ratio, uint64_t seed) {
  const fs::path root(data_dir);
  if (fs::exists(root / "train" / "index.txt") && fs::exists(root / "test" / "index.txt")) {
    return {data::load_corpus((root / "train").string()).scenes,
            data::load_corpus((root / "test").string()).scenes};
  }
  auto corpus = data::load_corpus(data_dir);
  const auto [train_idx, test_idx] = data::split_indices(corpus.scenes.size(), ratio, seed);
  std::vector<data::Scene> train, test;
  for (size_t i : train_idx) train.push_back(std::move(corpus.scenes[i]));
  for (size_t i : test_idx) test.push_back(std::move(corpus.scenes[i]));
  return {std::move(train), std::move(test)};
}

std::string history_csv(const std::vector<StepReport>& history) {
  std::ostringstream os;
  os << "iteration,L_OD,L_loc,L_conf,L_RP_on,L_RP_off,total\n";
  os.precision(10);
  for (const auto& r : history) {
    os << r.iteration << "," << r.l_od << "," << r.l_loc << "," << r.l_conf << "," << r.l_rp_on
       << "," << r.l_rp_off << "," << r.total << "\n";
  }
  return os.str();
}

TrainResult train(const std::string& data_dir, TrainConfig cfg, const std::string& out_dir) {
  cfg.finalize();
  cfg.validate();
  auto [train_set, test_set] = load_split(data_dir, cfg.split_ratio, cfg.seed);
  if (train_set.empty()) throw InvalidInput("train: no training scenes in " + data_dir);
  if (test_set.empty()) throw InvalidInput("train: no held-out scenes in " + data_dir);

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir);
  }

  Trainer trainer(cfg);
  TrainResult result;
  while (trainer.iteration() < cfg.max_iters) {
    result.history.push_back(trainer.sample_and_step(train_set));
    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        trainer.iteration() % cfg.checkpoint_every == 0 && trainer.iteration() < cfg.max_iters) {
      char name[40];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt",
                    static_cast<long long>(trainer.iteration()));
      trainer.save_checkpoint((fs::path(out_dir) / name).string());
    }
  }

  result.report = metrics::evaluate(trainer.model(), test_set, trainer.palette());

  if (!out_dir.empty()) {
    result.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
    trainer.save_checkpoint(result.checkpoint_path);
    std::ofstream csv(fs::path(out_dir) / "history.csv", std::ios::trunc);
    csv << history_csv(result.history);
    std::ofstream metrics_file(fs::path(out_dir) / "metrics.json", std::ios::trunc);
    metrics_file << result.report.to_json(trainer.palette());
  }
  return result;
}

}  // namespace vmrn::pipeline

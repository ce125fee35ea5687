#include "vmrn/model.hpp"

#include <algorithm>

#include "vmrn/op2l.hpp"

namespace vmrn {

det::DefaultBoxConfig ModelConfig::default_box_config() const {
  det::DefaultBoxConfig d;
  d.grid_h = grid();
  d.grid_w = grid();
  d.image_size = static_cast<double>(image_size);
  d.scales = box_scales;
  d.aspect_ratios = box_ratios;
  return d;
}

det::DecodeConfig ModelConfig::decode_config() const {
  det::DecodeConfig d;
  d.conf_threshold = conf_threshold;
  d.nms_iou = nms_iou;
  d.max_detections = max_detections;
  d.image_size = static_cast<double>(image_size);
  return d;
}

void ModelConfig::validate() const {
  if (image_size < 32 || image_size % 8 != 0) {
    throw InvalidInput("model: image_size must be a multiple of 8 and >= 32");
  }
  if (feature_channels < 2 || feature_channels % 2 != 0) {
    throw InvalidInput("model: feature_channels must be even and >= 2");
  }
  if (num_classes < 1) throw InvalidInput("model: need at least one class");
  if (box_scales.empty() || box_ratios.empty()) {
    throw InvalidInput("model: default boxes need at least one scale and ratio");
  }
  if (pool_hw < 1 || rel_hidden < 1) throw InvalidInput("model: pool/hidden sizes must be positive");
}

Tensor Model::he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng, double gain) {
  Tensor t(std::move(shape));
  const double std_dev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = std_dev * rng.normal();
  return t;
}

ad::Var Model::add_param(const std::string& name, Tensor init) {
  init.round_to_f32();
  params_.emplace_back(name, ad::param(std::move(init)));
  return params_.back().second;
}

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  defaults_ = det::gen_default_boxes(cfg_.default_box_config());

  const int64_t c = cfg_.feature_channels;
  const int64_t half = c / 2;
  const int64_t k = cfg_.boxes_per_cell();
  const int64_t classes = cfg_.num_classes + 1;

  add_param("phi.conv1.weight", he_normal({half, 3, 3, 3}, 3 * 9, rng));
  add_param("phi.conv1.bias", Tensor({half}));
  add_param("phi.conv2.weight", he_normal({c, half, 3, 3}, half * 9, rng));
  add_param("phi.conv2.bias", Tensor({c}));
  add_param("phi.conv3.weight", he_normal({c, c, 3, 3}, c * 9, rng));
  add_param("phi.conv3.bias", Tensor({c}));
  add_param("phi.conv4.weight", he_normal({c, c, 3, 3}, c * 9, rng));
  add_param("phi.conv4.bias", Tensor({c}));

  add_param("omega.loc.weight", he_normal({4 * k, c, 3, 3}, c * 9, rng, 0.1));
  add_param("omega.loc.bias", Tensor({4 * k}));
  add_param("omega.conf.weight", he_normal({classes * k, c, 3, 3}, c * 9, rng, 0.1));
  {
    // start with a strong background prior so early decodes stay quiet
    Tensor bias({classes * k});
    for (int64_t anchor = 0; anchor < k; ++anchor) bias[anchor * classes + cfg_.num_classes] = 2.0;
    add_param("omega.conf.bias", std::move(bias));
  }

  const int64_t hw = cfg_.pool_hw;
  add_param("theta.conv.weight", he_normal({c, 3 * c, 3, 3}, 3 * c * 9, rng));
  add_param("theta.conv.bias", Tensor({c}));
  add_param("theta.fc1.weight", he_normal({c * hw * hw, cfg_.rel_hidden}, c * hw * hw, rng));
  add_param("theta.fc1.bias", Tensor({cfg_.rel_hidden}));
  add_param("theta.fc2.weight", he_normal({cfg_.rel_hidden, 3}, cfg_.rel_hidden, rng, 0.05));
  add_param("theta.fc2.bias", Tensor({3}));
}

ad::Var Model::param(const std::string& name) const {
  for (const auto& [n, v] : params_)
    if (n == name) return v;
  throw InvalidInput("unknown parameter: " + name);
}

ad::Var Model::features(const ad::Var& images) const {
  auto stage = [&](const ad::Var& x, const char* conv) {
    return ad::relu(ad::conv2d(x, param(std::string("phi.") + conv + ".weight"),
                               param(std::string("phi.") + conv + ".bias"), 1, 1));
  };
  // center [0,1] pixels to [-1,1]
  auto h = stage(ad::add_const(ad::scale(images, 2.0), -1.0), "conv1");
  h = ad::maxpool2d(h, 2, 2);
  h = stage(h, "conv2");
  h = ad::maxpool2d(h, 2, 2);
  h = stage(h, "conv3");
  h = ad::maxpool2d(h, 2, 2);
  return stage(h, "conv4");
}

Model::RawOutputs Model::detect_raw(const ad::Var& features) const {
  const int64_t k = cfg_.boxes_per_cell();
  auto loc_map = ad::conv2d(features, param("omega.loc.weight"), param("omega.loc.bias"), 1, 1);
  auto conf_map = ad::conv2d(features, param("omega.conf.weight"), param("omega.conf.bias"), 1, 1);
  return RawOutputs{ad::cell_major(loc_map, k, 4), ad::cell_major(conf_map, k, cfg_.num_classes + 1)};
}

rel::RelHeadParams Model::rel_head() const {
  return rel::RelHeadParams{param("theta.conv.weight"), param("theta.conv.bias"),
                            param("theta.fc1.weight"), param("theta.fc1.bias"),
                            param("theta.fc2.weight"), param("theta.fc2.bias")};
}

NamedTensors Model::state_dict() const {
  NamedTensors out;
  for (const auto& [name, var] : params_) out.emplace_back(name, var->value);
  return out;
}

void Model::load_state(const NamedTensors& entries) {
  if (entries.size() != params_.size()) {
    throw InvalidInput("load_state: expected " + std::to_string(params_.size()) +
                       " parameters, got " + std::to_string(entries.size()));
  }
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, tensor] = entries[i];
    if (name != params_[i].first) {
      throw InvalidInput("load_state: parameter " + std::to_string(i) + " is '" + name +
                         "', expected '" + params_[i].first + "'");
    }
    check_same_shape(params_[i].second->value, tensor, "load_state");
    params_[i].second->value = tensor;
  }
}

namespace {

tree::PairwiseScores pair_scores(const Model& model, const ad::Var& image_features,
                                 const std::vector<BBox>& boxes) {
  tree::PairwiseScores scores;
  const auto pairs = op2l::enumerate_pairs(boxes);
  if (pairs.empty()) return scores;
  const auto batch = op2l::assemble_batch(image_features, pairs,
                                          static_cast<double>(model.config().image_size),
                                          model.config().pool_hw);
  const Tensor probs = rel::predict_probs(model.rel_head(), batch.features);
  for (size_t p = 0; p < batch.pairs.size(); ++p) {
    scores[{batch.pairs[p].subject_index, batch.pairs[p].object_index}] =
        tree::Prob3{probs[p * 3], probs[p * 3 + 1], probs[p * 3 + 2]};
  }
  return scores;
}

}  // namespace

ImagePrediction predict_scene(const Model& model, const Tensor& image) {
  const int64_t s = model.config().image_size;
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != s || image.dim(2) != s) {
    throw ShapeError("predict_scene: expected [3, " + std::to_string(s) + ", " + std::to_string(s) +
                     "] image, got " + shape_string(image.shape()));
  }
  auto batch = ad::leaf(Tensor({1, 3, s, s}, image.vec()));
  auto feat = model.features(batch);
  auto raw = model.detect_raw(feat);

  ImagePrediction pred;
  pred.detections = det::decode_detections(raw.loc->value, raw.conf->value, model.default_boxes(),
                                           model.config().num_classes, model.config().decode_config());
  if (pred.detections.size() >= 2) {
    std::vector<BBox> boxes;
    for (const auto& d : pred.detections) boxes.push_back(d.box);
    pred.rel_probs = pair_scores(model, ad::slice_image(feat, 0), boxes);
  }
  return pred;
}

tree::PairwiseScores rel_probs_for_boxes(const Model& model, const Tensor& image,
                                         const std::vector<BBox>& boxes) {
  const int64_t s = model.config().image_size;
  auto batch = ad::leaf(Tensor({1, 3, s, s}, image.vec()));
  auto feat = model.features(batch);
  return pair_scores(model, ad::slice_image(feat, 0), boxes);
}

tree::ManipulationTree tree_from_prediction(const ImagePrediction& pred) {
  std::vector<int> ids(pred.detections.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return tree::build_tree(ids, pred.rel_probs);
}

void append_config_entries(NamedTensors& entries, const ModelConfig& cfg) {
  auto scalar = [&](const char* key, double v) {
    entries.emplace_back(std::string("meta.cfg.") + key, Tensor({1}, {v}));
  };
  scalar("image_size", static_cast<double>(cfg.image_size));
  scalar("feature_channels", static_cast<double>(cfg.feature_channels));
  scalar("num_classes", static_cast<double>(cfg.num_classes));
  scalar("pool_hw", static_cast<double>(cfg.pool_hw));
  scalar("rel_hidden", static_cast<double>(cfg.rel_hidden));
  scalar("conf_threshold", cfg.conf_threshold);
  scalar("nms_iou", cfg.nms_iou);
  scalar("max_detections", static_cast<double>(cfg.max_detections));
  entries.emplace_back("meta.cfg.box_scales",
                       Tensor({static_cast<int64_t>(cfg.box_scales.size())}, cfg.box_scales));
  entries.emplace_back("meta.cfg.box_ratios",
                       Tensor({static_cast<int64_t>(cfg.box_ratios.size())}, cfg.box_ratios));
}

ModelConfig config_from_entries(const NamedTensors& entries) {
  ModelConfig cfg;
  bool found = false;
  for (const auto& [name, tensor] : entries) {
    if (!name.starts_with("meta.cfg.")) continue;
    found = true;
    const std::string key = name.substr(9);
    if (key == "image_size") cfg.image_size = static_cast<int64_t>(tensor[0]);
    else if (key == "feature_channels") cfg.feature_channels = static_cast<int64_t>(tensor[0]);
    else if (key == "num_classes") cfg.num_classes = static_cast<int64_t>(tensor[0]);
    else if (key == "pool_hw") cfg.pool_hw = static_cast<int64_t>(tensor[0]);
    else if (key == "rel_hidden") cfg.rel_hidden = static_cast<int64_t>(tensor[0]);
    else if (key == "conf_threshold") cfg.conf_threshold = tensor[0];
    else if (key == "nms_iou") cfg.nms_iou = tensor[0];
    else if (key == "max_detections") cfg.max_detections = static_cast<int64_t>(tensor[0]);
    else if (key == "box_scales") cfg.box_scales = tensor.vec();
    else if (key == "box_ratios") cfg.box_ratios = tensor.vec();
  }
  if (!found) throw ParseError("checkpoint carries no model configuration");
  return cfg;
}

Model load_model(const std::string& checkpoint_path) {
  const NamedTensors entries = read_checkpoint(checkpoint_path);
  const ModelConfig cfg = config_from_entries(entries);
  Rng rng(0);
  Model model(cfg, rng);
  NamedTensors params;
  for (const auto& [name, tensor] : entries) {
    if (Model::is_phi(name) || Model::is_omega(name) || Model::is_theta(name)) {
      params.emplace_back(name, tensor);
    }
  }
  model.load_state(params);
  return model;
}

}  // namespace vmrn

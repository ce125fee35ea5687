#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vmrn/autodiff.hpp"
#include "vmrn/checkpoint.hpp"
#include "vmrn/detector.hpp"
#include "vmrn/geometry.hpp"
#include "vmrn/relhead.hpp"
#include "vmrn/rng.hpp"

namespace vmrn {

/// Network shape. Defaults are the desk-scale setup: 3x64x64 inputs, a
/// four-stage backbone down to feature_channels x 8 x 8, and 9 default boxes
/// per cell. Everything scales up (e.g. 304 px / 512 channels) via config.
struct ModelConfig {
  int64_t image_size = 64;
  int64_t feature_channels = 32;
  int64_t num_classes = 10;
  std::vector<double> box_scales = {0.22, 0.34, 0.5};
  std::vector<double> box_ratios = {1.0, 2.0, 0.5};
  int64_t pool_hw = 7;
  int64_t rel_hidden = 64;
  double conf_threshold = 0.5;
  double nms_iou = 0.45;
  int64_t max_detections = 10;

  int64_t grid() const { return image_size / 8; }
  int64_t boxes_per_cell() const {
    return static_cast<int64_t>(box_scales.size() * box_ratios.size());
  }
  int64_t num_defaults() const { return grid() * grid() * boxes_per_cell(); }

  det::DefaultBoxConfig default_box_config() const;
  det::DecodeConfig decode_config() const;
  void validate() const;
};

/// The whole network: feature extractor (phi.*), detector heads (omega.*)
/// and relationship head (theta.*), held as named parameters in a fixed
/// order. Forward helpers build autodiff graphs on demand; the model itself
/// is stateless apart from its parameters.
class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<BBox>& default_boxes() const { return defaults_; }

  std::vector<std::pair<std::string, ad::Var>>& params() { return params_; }
  const std::vector<std::pair<std::string, ad::Var>>& params() const { return params_; }
  ad::Var param(const std::string& name) const;

  static bool is_phi(const std::string& name) { return name.starts_with("phi."); }
  static bool is_omega(const std::string& name) { return name.starts_with("omega."); }
  static bool is_theta(const std::string& name) { return name.starts_with("theta."); }

  /// Backbone: [N, 3, S, S] -> [N, C, S/8, S/8].
  ad::Var features(const ad::Var& images) const;

  struct RawOutputs {
    ad::Var loc;   // [N*D, 4]
    ad::Var conf;  // [N*D, num_classes + 1], background last
  };
  RawOutputs detect_raw(const ad::Var& features) const;

  rel::RelHeadParams rel_head() const;

  NamedTensors state_dict() const;
  void load_state(const NamedTensors& entries);

 private:
  ad::Var add_param(const std::string& name, Tensor init);
  Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng, double gain = 1.0);

  ModelConfig cfg_;
  std::vector<BBox> defaults_;
  std::vector<std::pair<std::string, ad::Var>> params_;
};

/// Full single-image forward: detections plus relation probabilities for
/// every ordered pair of detections.
struct ImagePrediction {
  std::vector<det::Detection> detections;
  tree::PairwiseScores rel_probs;  // keyed by detection indexes
};

ImagePrediction predict_scene(const Model& model, const Tensor& image);

/// Relation probabilities for every ordered pair of the given boxes, with
/// features pooled from the image (the offline evaluation path).
tree::PairwiseScores rel_probs_for_boxes(const Model& model, const Tensor& image,
                                         const std::vector<BBox>& boxes);

/// Manipulation tree over detection indexes, from reconciled pair scores.
tree::ManipulationTree tree_from_prediction(const ImagePrediction& pred);

/// The model configuration as meta.cfg.* checkpoint entries, and back.
void append_config_entries(NamedTensors& entries, const ModelConfig& cfg);
ModelConfig config_from_entries(const NamedTensors& entries);

/// Rebuilds a model (architecture from meta.cfg.*, weights from the
/// parameter entries) of a checkpoint written by the trainer.
Model load_model(const std::string& checkpoint_path);

}  // namespace vmrn

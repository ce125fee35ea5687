#pragma once

#include <map>
#include <string>
#include <vector>

#include "vmrn/dataio.hpp"
#include "vmrn/eval.hpp"
#include "vmrn/model.hpp"
#include "vmrn/sgd.hpp"

namespace vmrn::pipeline {

/// Everything a training run needs. The learning-rate schedule and the
/// pretrain/max iteration counts follow the reference settings divided by
/// iter_scale (default 100), so a desk run finishes in minutes while
/// --paper-scale restores the full counts.
struct TrainConfig {
  ad::SgdConfig sgd;
  double lambda = 0.5;  // online/offline relation mix
  double mu = 0.5;      // detector/relation gradient mix for shared layers
  double alpha = 1.0;   // loc/conf mix inside the detector loss
  int64_t pretrain_iters = 100;
  int64_t max_iters = 2100;
  int64_t iter_scale = 100;
  uint64_t seed = 0;
  double split_ratio = 0.9;
  int64_t checkpoint_every = 500;
  bool rel_mean_reduction = false;  // Eq.-style sums by default
  double flip_prob = 0.5;
  ModelConfig model;

  void validate() const;

  /// Derives the two-step learning-rate schedule (drop x0.1 at the scaled
  /// 80k mark) when none was given explicitly.
  void finalize();

  /// Full-scale settings: unscaled iteration counts, 304 px inputs, 512
  /// feature channels.
  void apply_paper_scale();

  static TrainConfig from_file(const std::string& path);
  std::string to_text() const;
};

/// Eq.-5 combination of the two losses for the shared layers.
inline double combined_loss(double l_od, double l_rp, double mu) {
  if (mu < 0.0 || mu > 1.0) throw InvalidInput("combined_loss: mu must be in [0, 1]");
  return mu * l_od + (1.0 - mu) * l_rp;
}

struct StepReport {
  int64_t iteration = 0;
  double l_od = 0.0;
  double l_loc = 0.0;
  double l_conf = 0.0;
  double l_rp_on = 0.0;
  double l_rp_off = 0.0;
  double l_rp = 0.0;
  double total = 0.0;
};

/// Optional introspection for tests: the two shared-layer gradient branches
/// before mixing.
struct StepDiagnostics {
  std::map<std::string, Tensor> phi_grad_detector;
  std::map<std::string, Tensor> phi_grad_relation;
  bool relation_branch_ran = false;
};

/// Owns the model, optimizer state, iteration counter and RNG stream of one
/// training run. Deterministic: same seed, same data, same steps give
/// bit-identical state.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const TrainConfig& cfg, const std::string& checkpoint_path);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const data::ClassPalette& palette() const { return palette_; }
  int64_t iteration() const { return iteration_; }
  Rng& rng() { return rng_; }

  /// One optimization step on an explicit batch. Detector-only before
  /// pretrain_iters; afterwards the relation head trains on online +
  /// offline pairs and the shared layers take the mixed gradient.
  StepReport train_step(const std::vector<const data::Scene*>& batch,
                        StepDiagnostics* diag = nullptr);

  /// Samples batch_size scenes (with replacement) and random horizontal
  /// flips from the trainer's RNG stream, then steps.
  StepReport sample_and_step(const std::vector<data::Scene>& train_set);

  /// Parameters, momentum state and stream position, all in the versioned
  /// container format.
  void save_checkpoint(const std::string& path) const;

 private:
  TrainConfig cfg_;
  Rng rng_;
  Model model_;
  data::ClassPalette palette_;
  std::map<std::string, Tensor> velocity_;
  int64_t iteration_ = 0;
};

/// Mirrors a scene horizontally; boxes move, relations stay.
data::Scene flip_scene(const data::Scene& scene);

/// Train/test scenes for a corpus directory: explicit train/ + test/
/// subdirectories when present, otherwise a seeded split of index.txt.
std::pair<std::vector<data::Scene>, std::vector<data::Scene>> load_split(
    const std::string& data_dir, double ratio, uint64_t seed);

struct TrainResult {
  metrics::MetricReport report;
  std::vector<StepReport> history;
  std::string checkpoint_path;
};

/// The whole run: load data, pretrain, joint train, checkpoint, evaluate on
/// the held-out split. When out_dir is non-empty it receives model.ckpt,
/// periodic checkpoints, history.csv and metrics.json.
TrainResult train(const std::string& data_dir, TrainConfig cfg, const std::string& out_dir);

std::string history_csv(const std::vector<StepReport>& history);

}  // namespace vmrn::pipeline

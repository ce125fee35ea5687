#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vmrn/pipeline.hpp"
#include "vmrn/rng.hpp"

using namespace vmrn;
using namespace vmrn::pipeline;

namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.feature_channels = 8;
  cfg.model.rel_hidden = 16;
  cfg.sgd.batch_size = 2;
  cfg.pretrain_iters = 2;
  cfg.max_iters = 40;
  cfg.checkpoint_every = 0;
  return cfg;
}

std::vector<data::Scene> tiny_corpus(int count, uint64_t seed = 0) {
  data::SynthConfig cfg;
  cfg.seed = seed;
  std::vector<data::Scene> out;
  for (int i = 0; i < count; ++i) out.push_back(data::gen_synthetic_scene(cfg, i));
  return out;
}

bool same_values(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.vec() != b[i].second.vec()) return false;
  }
  return true;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

fs::path temp_dir(const char* tag) {
  const fs::path dir = fs::temp_directory_path() / (std::string("vmrn_pipe_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("combined_loss arithmetic is exact") {
  CHECK(combined_loss(1.0, 3.0, 0.5) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(combined_loss(1.7, 9.9, 1.0) == 1.7);
  CHECK(combined_loss(1.7, 9.9, 0.0) == 9.9);
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, 1.5), InvalidInput);
}

TEST_CASE("config: schedule derives the scaled 80k drop") {
  TrainConfig cfg;
  cfg.finalize();
  CHECK(cfg.sgd.lr_at(0) == 1e-3);
  CHECK(cfg.sgd.lr_at(799) == 1e-3);
  CHECK(cfg.sgd.lr_at(800) == doctest::Approx(1e-4));
}

TEST_CASE("config: paper scale restores full iteration counts") {
  TrainConfig cfg;
  cfg.apply_paper_scale();
  cfg.finalize();
  CHECK(cfg.pretrain_iters == 10000);
  CHECK(cfg.max_iters == 120000);
  CHECK(cfg.model.image_size == 304);
  CHECK(cfg.model.feature_channels == 512);
  CHECK(cfg.sgd.lr_at(79999) == 1e-3);
  CHECK(cfg.sgd.lr_at(80000) == doctest::Approx(1e-4));
}

TEST_CASE("config file round-trip") {
  const fs::path dir = temp_dir("cfg");
  TrainConfig cfg = tiny_config();
  cfg.lambda = 0.25;
  cfg.mu = 0.75;
  cfg.seed = 99;
  cfg.model.box_scales = {0.2, 0.4};
  {
    std::ofstream os(dir / "train.cfg");
    os << cfg.to_text();
  }
  const TrainConfig back = TrainConfig::from_file((dir / "train.cfg").string());
  CHECK(back.lambda == cfg.lambda);
  CHECK(back.mu == cfg.mu);
  CHECK(back.seed == cfg.seed);
  CHECK(back.model.feature_channels == cfg.model.feature_channels);
  CHECK(back.model.box_scales == cfg.model.box_scales);
  CHECK(back.sgd.batch_size == cfg.sgd.batch_size);
  fs::remove_all(dir);
}

TEST_CASE("config file rejects unknown keys with line context") {
  const fs::path dir = temp_dir("badcfg");
  {
    std::ofstream os(dir / "bad.cfg");
    os << "# comment\nlearning_rate = 0.001\nwat = 7\n";
  }
  CHECK_THROWS_WITH_AS(TrainConfig::from_file((dir / "bad.cfg").string()), doctest::Contains(":3"),
                       ParseError);
  fs::remove_all(dir);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.mu = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = TrainConfig{};
  cfg.pretrain_iters = cfg.max_iters;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("flip_scene mirrors boxes and pixels, relations unchanged") {
  const auto scenes = tiny_corpus(3, 5);
  for (const auto& scene : scenes) {
    const data::Scene flipped = flip_scene(scene);
    const double w = static_cast<double>(scene.annotation.width);
    for (size_t i = 0; i < scene.annotation.objects.size(); ++i) {
      const BBox& orig = scene.annotation.objects[i].box;
      const BBox& flip = flipped.annotation.objects[i].box;
      CHECK(flip.x_min == doctest::Approx(w - orig.x_max));
      CHECK(flip.x_max == doctest::Approx(w - orig.x_min));
      CHECK(flip.y_min == orig.y_min);
      CHECK(flipped.annotation.objects[i].parent_indexes ==
            scene.annotation.objects[i].parent_indexes);
    }
    const data::Scene twice = flip_scene(flipped);
    CHECK(twice.image.vec() == scene.image.vec());
  }
}

TEST_CASE("same seed, same data: bit-identical checkpoints") {
  const auto scenes = tiny_corpus(8);
  const TrainConfig cfg = tiny_config();
  const fs::path dir = temp_dir("det");

  auto run = [&](const char* name) {
    Trainer t(cfg);
    for (int i = 0; i < 6; ++i) t.sample_and_step(scenes);
    const std::string path = (dir / name).string();
    t.save_checkpoint(path);
    return path;
  };
  const std::string a = run("a.ckpt");
  const std::string b = run("b.ckpt");
  const std::string bytes = file_bytes(a);
  CHECK(bytes == file_bytes(b));
  CHECK(bytes.substr(0, 4) == "VMRN");
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip restores parameters bit-exactly") {
  const auto scenes = tiny_corpus(6);
  const TrainConfig cfg = tiny_config();
  const fs::path dir = temp_dir("roundtrip");

  Trainer t(cfg);
  for (int i = 0; i < 4; ++i) t.sample_and_step(scenes);
  const std::string path = (dir / "state.ckpt").string();
  t.save_checkpoint(path);

  Trainer restored(cfg, path);
  CHECK(restored.iteration() == t.iteration());
  CHECK(same_values(restored.model().state_dict(), t.model().state_dict()));

  // saving again is byte-identical
  const std::string path2 = (dir / "state2.ckpt").string();
  restored.save_checkpoint(path2);
  CHECK(file_bytes(path) == file_bytes(path2));
  fs::remove_all(dir);
}

TEST_CASE("a resumed run reproduces the uninterrupted losses exactly") {
  const auto scenes = tiny_corpus(8);
  const TrainConfig cfg = tiny_config();
  const fs::path dir = temp_dir("resume");

  Trainer full(cfg);
  std::vector<StepReport> tail;
  const std::string mid = (dir / "mid.ckpt").string();
  for (int i = 0; i < 10; ++i) {
    if (i == 5) full.save_checkpoint(mid);
    const StepReport r = full.sample_and_step(scenes);
    if (i >= 5) tail.push_back(r);
  }

  Trainer resumed(cfg, mid);
  CHECK(resumed.iteration() == 5);
  for (const StepReport& want : tail) {
    const StepReport got = resumed.sample_and_step(scenes);
    CHECK(got.iteration == want.iteration);
    CHECK(got.l_od == want.l_od);
    CHECK(got.l_rp == want.l_rp);
    CHECK(got.total == want.total);
  }
  CHECK(same_values(resumed.model().state_dict(), full.model().state_dict()));
  fs::remove_all(dir);
}

TEST_CASE("pretrain phase leaves the relation head bit-unchanged") {
  const auto scenes = tiny_corpus(6);
  TrainConfig cfg = tiny_config();
  cfg.pretrain_iters = 30;  // everything below stays in the detector phase
  Trainer t(cfg);
  const NamedTensors before = t.model().state_dict();
  for (int i = 0; i < 5; ++i) t.sample_and_step(scenes);
  const NamedTensors after = t.model().state_dict();
  for (size_t i = 0; i < before.size(); ++i) {
    if (Model::is_theta(before[i].first)) {
      CHECK(before[i].second.vec() == after[i].second.vec());
    } else if (before[i].first == "phi.conv1.weight") {
      CHECK(before[i].second.vec() != after[i].second.vec());
    }
  }
}

TEST_CASE("mu = 1: shared layers follow the detector exactly") {
  const auto scenes = tiny_corpus(6);
  std::vector<const data::Scene*> batch{&scenes[0], &scenes[1]};

  TrainConfig joint_cfg = tiny_config();
  joint_cfg.pretrain_iters = 0;
  joint_cfg.max_iters = 10;
  joint_cfg.mu = 1.0;
  Trainer joint(joint_cfg);

  TrainConfig pre_cfg = tiny_config();
  pre_cfg.pretrain_iters = 9;  // same run length, never leaves pretrain
  pre_cfg.max_iters = 10;
  Trainer pretrain(pre_cfg);

  for (int i = 0; i < 3; ++i) {
    joint.train_step(batch);
    pretrain.train_step(batch);
  }
  const NamedTensors a = joint.model().state_dict();
  const NamedTensors b = pretrain.model().state_dict();
  bool theta_differs = false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (Model::is_theta(a[i].first)) {
      theta_differs = theta_differs || a[i].second.vec() != b[i].second.vec();
    } else {
      CHECK(a[i].second.vec() == b[i].second.vec());  // phi and omega identical
    }
  }
  CHECK(theta_differs);  // the joint run did train its head
}

TEST_CASE("mu mixing reproduces the parameter delta from the branch gradients") {
  const auto scenes = tiny_corpus(6);
  std::vector<const data::Scene*> batch{&scenes[2], &scenes[3]};

  for (const double mu : {0.0, 0.3, 1.0}) {
    TrainConfig cfg = tiny_config();
    cfg.pretrain_iters = 0;
    cfg.mu = mu;
    Trainer t(cfg);
    const NamedTensors before = t.model().state_dict();

    StepDiagnostics diag;
    t.train_step(batch, &diag);
    REQUIRE(diag.relation_branch_ran);

    for (const auto& [name, tensor] : before) {
      if (!Model::is_phi(name)) continue;
      const Tensor& g_det = diag.phi_grad_detector.at(name);
      const Tensor& g_rel = diag.phi_grad_relation.at(name);
      Tensor expected = tensor;
      Tensor mixed(tensor.shape());
      for (int64_t i = 0; i < mixed.numel(); ++i) {
        mixed[i] = mu * g_det[i] + (1.0 - mu) * g_rel[i];
      }
      Tensor velocity;
      ad::sgd_step(expected, mixed, velocity, t.config().sgd, 0);
      expected.round_to_f32();
      CHECK(t.model().param(name)->value.vec() == expected.vec());
    }
  }
}

TEST_CASE("losses drop over the first training steps") {
  const auto scenes = tiny_corpus(16, 0);
  TrainConfig cfg = tiny_config();
  cfg.pretrain_iters = 10;
  cfg.max_iters = 200;
  cfg.sgd.batch_size = 4;
  Trainer t(cfg);
  std::vector<double> losses;
  for (int i = 0; i < 150; ++i) losses.push_back(t.sample_and_step(scenes).l_od);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 25; ++i) {
    head += losses[static_cast<size_t>(i)];
    tail += losses[static_cast<size_t>(125 + i)];
  }
  CHECK(tail < 0.9 * head);
}

TEST_CASE("non-finite losses abort with the offending term") {
  const auto scenes = tiny_corpus(4);
  TrainConfig cfg = tiny_config();
  Trainer t(cfg);
  auto w = t.model().param("phi.conv1.weight");
  w->value[0] = 1e308;
  w->value[1] = 1e308;
  std::vector<const data::Scene*> batch{&scenes[0]};
  CHECK_THROWS_WITH_AS(t.train_step(batch), doctest::Contains("non-finite"), TrainingError);
}

TEST_CASE("empty batches are rejected") {
  Trainer t(tiny_config());
  CHECK_THROWS_AS(t.train_step({}), InvalidInput);
}

TEST_CASE("load_split honors explicit train/test directories") {
  const fs::path dir = temp_dir("split");
  data::SynthConfig synth;
  synth.seed = 0;
  data::write_corpus((dir / "train").string(), synth, 4, 0);
  data::write_corpus((dir / "test").string(), synth, 2, 100);
  const auto [train, test] = load_split(dir.string(), 0.9, 0);
  CHECK(train.size() == 4);
  CHECK(test.size() == 2);
  CHECK(test[0].annotation.image_id == "scene_000100");
  fs::remove_all(dir);
}

TEST_CASE("load_split falls back to the seeded 9:1 split") {
  const fs::path dir = temp_dir("split910");
  data::SynthConfig synth;
  synth.seed = 1;
  data::write_corpus(dir.string(), synth, 10, 0);
  const auto [train, test] = load_split(dir.string(), 0.9, 7);
  CHECK(train.size() == 9);
  CHECK(test.size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("history csv carries the documented columns") {
  StepReport r;
  r.iteration = 3;
  r.l_od = 1.5;
  const std::string csv = history_csv({r});
  CHECK(csv.find("iteration,L_OD,L_loc,L_conf,L_RP_on,L_RP_off,total\n") == 0);
  CHECK(csv.find("\n3,1.5,") != std::string::npos);
}

TEST_SUITE_END();

#pragma once

#include <cstdint>
#include <map>

#include "vmrn/tensor.hpp"

namespace vmrn::ad {

/// SGD hyperparameters. The schedule maps an iteration threshold to the
/// learning rate that takes effect there; when empty, learning_rate is used
/// throughout.
struct SgdConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  bool nesterov = true;
  int64_t batch_size = 8;
  std::map<int64_t, double> schedule;

  double lr_at(int64_t iter) const {
    double lr = learning_rate;
    for (const auto& [start, value] : schedule) {
      if (iter >= start) lr = value;
    }
    return lr;
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidInput("sgd: learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw InvalidInput("sgd: momentum must be in [0, 1)");
    if (batch_size < 1) throw InvalidInput("sgd: batch_size must be >= 1");
    if (weight_decay < 0.0) throw InvalidInput("sgd: weight_decay must be >= 0");
  }
};

/// One (Nesterov) momentum step on a single parameter tensor:
///   g   <- grad + weight_decay * p
///   v   <- momentum * v + g
///   upd <- nesterov ? g + momentum * v : v
///   p   <- p - lr(iter) * upd
inline void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, const SgdConfig& cfg,
                     int64_t iter) {
  check_same_shape(param, grad, "sgd_step");
  if (!velocity.same_shape(param)) velocity = Tensor(param.shape());
  const double lr = cfg.lr_at(iter);
  for (int64_t i = 0; i < param.numel(); ++i) {
    double g = grad[i] + cfg.weight_decay * param[i];
    velocity[i] = cfg.momentum * velocity[i] + g;
    const double update = cfg.nesterov ? g + cfg.momentum * velocity[i] : velocity[i];
    param[i] -= lr * update;
  }
}

}  // namespace vmrn::ad

#pragma once

#include <string>
#include <vector>

namespace vmrn::ad {

struct LayerCheck {
  std::string layer;
  double max_rel_error = 0.0;
  int seeds = 0;
};

/// Central finite-difference checks of every differentiable layer plus the
/// full pairing path and the relation head, `seeds` random draws each in
/// 64-bit. An empty filter runs everything; otherwise only the named layer.
std::vector<LayerCheck> run_gradient_checks(const std::string& layer_filter = "", int seeds = 20);

/// Names accepted by the filter.
std::vector<std::string> gradient_check_layers();

}  // namespace vmrn::ad

#pragma once

#include "vmrn/dataio.hpp"
#include "vmrn/model.hpp"

namespace vmrn::render {

/// Upscaled copy of the image with detection boxes in their class colors,
/// class-name labels, and one arrow per manipulation-tree edge (parent to
/// child).
Tensor annotate_prediction(const Tensor& image, const ImagePrediction& pred,
                           const data::ClassPalette& palette, int upscale = 4);

}  // namespace vmrn::render

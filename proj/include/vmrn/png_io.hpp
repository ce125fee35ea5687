#pragma once

#include <string>

#include "vmrn/tensor.hpp"

namespace vmrn {

/// Reads an 8-bit RGB PNG into a [3, H, W] tensor with values in [0, 1].
/// Grayscale, palette and alpha variants are converted on the fly.
Tensor read_png_rgb(const std::string& path);

/// Writes a [3, H, W] tensor with values in [0, 1] as an 8-bit RGB PNG.
void write_png_rgb(const std::string& path, const Tensor& image);

}  // namespace vmrn

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vmrn/tensor.hpp"

namespace vmrn {

/// Ordered list of named tensors, as stored in a checkpoint.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Writes the versioned binary container: magic "VMRN", format version u32,
/// then per entry: name length u32, name bytes, shape rank u32, dims u32
/// each, and the little-endian float32 payload. Values are truncated to
/// float32; keep tensors on the f32 grid (Tensor::round_to_f32) when
/// bit-exact round-trips matter.
void write_checkpoint(const std::string& path, const NamedTensors& entries);

/// Reads a container written by write_checkpoint, preserving entry order.
NamedTensors read_checkpoint(const std::string& path);

}  // namespace vmrn

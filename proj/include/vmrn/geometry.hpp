#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "vmrn/error.hpp"

namespace vmrn {

/// Axis-aligned box in pixel coordinates, (x_min, y_min) upper left and
/// (x_max, y_max) lower right. Coordinates are real-valued; sub-pixel
/// positions are allowed.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
  }

  bool operator==(const BBox& o) const = default;

  /// Total order used for deterministic tie-breaking.
  friend bool operator<(const BBox& a, const BBox& b) {
    if (a.x_min != b.x_min) return a.x_min < b.x_min;
    if (a.y_min != b.y_min) return a.y_min < b.y_min;
    if (a.x_max != b.x_max) return a.x_max < b.x_max;
    return a.y_max < b.y_max;
  }
};

inline std::string to_string(const BBox& b) {
  return "(" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " +
         std::to_string(b.x_max) + ", " + std::to_string(b.y_max) + ")";
}

inline void check_box(const BBox& b, const char* what = "box") {
  if (!b.valid()) {
    throw InvalidInput(std::string(what) + " is degenerate or non-finite: " + to_string(b));
  }
}

/// Dimensionless offsets of a box relative to a default box, in the
/// center-size parameterization: dx = (cx_b - cx_d) / w_d, dy likewise,
/// dw = log(w_b / w_d), dh = log(h_b / h_d).
struct OffsetVector {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  bool operator==(const OffsetVector& o) const = default;
};

/// Intersection area over union area. Touching boxes (zero-area overlap)
/// count as 0. The operands are put in canonical order first so that
/// iou(a, b) and iou(b, a) are equal to the last bit even when the compiler
/// contracts the area products into FMAs.
inline double iou(const BBox& a, const BBox& b) {
  check_box(a, "iou: first box");
  check_box(b, "iou: second box");
  const BBox& p = b < a ? b : a;
  const BBox& q = b < a ? a : b;
  const double ix = std::min(p.x_max, q.x_max) - std::max(p.x_min, q.x_min);
  const double iy = std::min(p.y_max, q.y_max) - std::max(p.y_min, q.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (p.area() + q.area() - inter);
}

/// Intersection area (0 when disjoint). Boxes must be valid.
inline double intersection_area(const BBox& a, const BBox& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  return ix * iy;
}

/// Smallest box containing both inputs.
inline BBox union_box(const BBox& a, const BBox& b) {
  check_box(a, "union_box: first box");
  check_box(b, "union_box: second box");
  return BBox{std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min),
              std::max(a.x_max, b.x_max), std::max(a.y_max, b.y_max)};
}

inline OffsetVector encode_offsets(const BBox& b, const BBox& d) {
  check_box(b, "encode_offsets: box");
  check_box(d, "encode_offsets: default box");
  return OffsetVector{(b.center_x() - d.center_x()) / d.width(),
                      (b.center_y() - d.center_y()) / d.height(),
                      std::log(b.width() / d.width()), std::log(b.height() / d.height())};
}

inline BBox decode_offsets(const OffsetVector& o, const BBox& d) {
  check_box(d, "decode_offsets: default box");
  const double cx = o.dx * d.width() + d.center_x();
  const double cy = o.dy * d.height() + d.center_y();
  const double w = std::exp(o.dw) * d.width();
  const double h = std::exp(o.dh) * d.height();
  return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

/// Clips a box to [0, width] x [0, height]. The result may be degenerate if
/// the box lies outside the image.
inline BBox clip_box(const BBox& b, double width, double height) {
  return BBox{std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height),
              std::clamp(b.x_max, 0.0, width), std::clamp(b.y_max, 0.0, height)};
}

}  // namespace vmrn

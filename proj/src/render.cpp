#include "vmrn/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace vmrn::render {

namespace {

// 3x5 glyphs, 15 bits row-major, MSB first in each row.
uint16_t glyph(char c) {
  static const std::map<char, uint16_t> table = {
      {'A', 0b010101111101101}, {'B', 0b110101110101110}, {'C', 0b011100100100011},
      {'D', 0b110101101101110}, {'E', 0b111100110100111}, {'F', 0b111100110100100},
      {'G', 0b011100101101011}, {'H', 0b101101111101101}, {'I', 0b111010010010111},
      {'J', 0b001001001101010}, {'K', 0b101110100110101}, {'L', 0b100100100100111},
      {'M', 0b101111111101101}, {'N', 0b110101101101101}, {'O', 0b010101101101010},
      {'P', 0b110101110100100}, {'Q', 0b010101101110011}, {'R', 0b110101110110101},
      {'S', 0b011100010001110}, {'T', 0b111010010010010}, {'U', 0b101101101101111},
      {'V', 0b101101101101010}, {'W', 0b101101111111101}, {'X', 0b101101010101101},
      {'Y', 0b101101010010010}, {'Z', 0b111001010100111}, {'0', 0b111101101101111},
      {'1', 0b010110010010111}, {'2', 0b111001111100111}, {'3', 0b111001111001111},
      {'4', 0b101101111001001}, {'5', 0b111100111001111}, {'6', 0b111100111101111},
      {'7', 0b111001001010010}, {'8', 0b111101111101111}, {'9', 0b111101111001111},
      {'-', 0b000000111000000}, {'_', 0b000000000000111},
  };
  const auto it = table.find(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return it == table.end() ? 0 : it->second;
}

struct Canvas {
  Tensor& image;
  int64_t h, w, plane;

  void put(int64_t r, int64_t c, const std::array<double, 3>& color) {
    if (r < 0 || r >= h || c < 0 || c >= w) return;
    for (int ch = 0; ch < 3; ++ch) image[ch * plane + r * w + c] = color[ch];
  }

  void rect_outline(double x0, double y0, double x1, double y1,
                    const std::array<double, 3>& color, int thickness) {
    const int64_t r0 = static_cast<int64_t>(std::lround(y0));
    const int64_t r1 = static_cast<int64_t>(std::lround(y1));
    const int64_t c0 = static_cast<int64_t>(std::lround(x0));
    const int64_t c1 = static_cast<int64_t>(std::lround(x1));
    for (int t = 0; t < thickness; ++t) {
      for (int64_t c = c0; c <= c1; ++c) {
        put(r0 + t, c, color);
        put(r1 - t, c, color);
      }
      for (int64_t r = r0; r <= r1; ++r) {
        put(r, c0 + t, color);
        put(r, c1 - t, color);
      }
    }
  }

  void line(double x0, double y0, double x1, double y1, const std::array<double, 3>& color) {
    const double len = std::max(1.0, std::hypot(x1 - x0, y1 - y0));
    const int steps = static_cast<int>(std::ceil(len));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      put(static_cast<int64_t>(std::lround(y0 + t * (y1 - y0))),
          static_cast<int64_t>(std::lround(x0 + t * (x1 - x0))), color);
    }
  }

  void arrow(double x0, double y0, double x1, double y1, const std::array<double, 3>& color) {
    line(x0, y0, x1, y1, color);
    const double angle = std::atan2(y1 - y0, x1 - x0);
    for (double side : {0.5, -0.5}) {
      line(x1, y1, x1 - 8.0 * std::cos(angle + side), y1 - 8.0 * std::sin(angle + side), color);
    }
  }

  void text(const std::string& s, int64_t r, int64_t c, const std::array<double, 3>& color,
            int scale) {
    for (char ch : s) {
      const uint16_t bits = glyph(ch);
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (bits & (1 << (14 - row * 3 - col))) {
            for (int dr = 0; dr < scale; ++dr) {
              for (int dc = 0; dc < scale; ++dc) {
                put(r + row * scale + dr, c + col * scale + dc, color);
              }
            }
          }
        }
      }
      c += 4 * scale;
    }
  }
};

}  // namespace

Tensor annotate_prediction(const Tensor& image, const ImagePrediction& pred,
                           const data::ClassPalette& palette, int upscale) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("annotate_prediction: expected [3, H, W], got " + shape_string(image.shape()));
  }
  const int64_t h = image.dim(1), w = image.dim(2);
  const int64_t oh = h * upscale, ow = w * upscale;
  Tensor out({3, oh, ow});
  for (int ch = 0; ch < 3; ++ch) {
    for (int64_t r = 0; r < oh; ++r) {
      for (int64_t c = 0; c < ow; ++c) {
        out[(ch * oh + r) * ow + c] = image[(ch * h + r / upscale) * w + c / upscale];
      }
    }
  }

  Canvas canvas{out, oh, ow, oh * ow};
  const std::array<double, 3> white{1.0, 1.0, 1.0};
  const double s = static_cast<double>(upscale);

  for (const auto& det : pred.detections) {
    const auto& color = palette.colors.at(static_cast<size_t>(det.cls));
    canvas.rect_outline(det.box.x_min * s, det.box.y_min * s, det.box.x_max * s, det.box.y_max * s,
                        color, 2);
    canvas.text(palette.names.at(static_cast<size_t>(det.cls)),
                static_cast<int64_t>(det.box.y_min * s) - 6 * 1 - 2,
                static_cast<int64_t>(det.box.x_min * s), white, 1);
  }

  if (!pred.detections.empty()) {
    for (const auto& edge : tree_from_prediction(pred).edges) {
      const BBox& from = pred.detections[static_cast<size_t>(edge.parent)].box;
      const BBox& to = pred.detections[static_cast<size_t>(edge.child)].box;
      canvas.arrow(from.center_x() * s, from.center_y() * s, to.center_x() * s,
                   to.center_y() * s, white);
    }
  }
  return out;
}

}  // namespace vmrn::render

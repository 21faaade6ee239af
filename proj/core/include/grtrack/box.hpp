#pragma once

#include <string>

namespace grtrack {

/// Center/size box. Inside the model, coordinates are normalised to the
/// search crop ([0,1]); the geometry helpers below are unit-agnostic.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static BBox from_corners(double x0, double y0, double x1, double y1) {
    return BBox{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
  bool operator==(const BBox&) const = default;
};

/// Top-left/size box in frame pixels (the groundtruth.txt convention).
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  BBox center_form() const { return BBox{x + 0.5 * w, y + 0.5 * h, w, h}; }
  static PixelBox from_center(const BBox& b) { return PixelBox{b.x0(), b.y0(), b.w, b.h}; }
  bool operator==(const PixelBox&) const = default;
};

/// True when 0 <= w,h <= 1 and the box overlaps the unit square.
bool is_valid_normalized(const BBox& b);

/// Intersection over union in [0,1]; zero when either area is zero.
double iou(const BBox& a, const BBox& b);
double iou(const PixelBox& a, const PixelBox& b);

/// Generalised IoU in (-1, 1]. Throws std::invalid_argument if both
/// boxes are degenerate (no enclosing area).
double giou(const BBox& a, const BBox& b);

/// Clamps a pixel box to [0,width]x[0,height], keeping at least 1px extent.
PixelBox clamp_to_frame(const PixelBox& b, double width, double height);

std::string to_string(const BBox& b);

}  // namespace grtrack

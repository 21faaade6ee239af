#include "grtrack/box.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace grtrack {

bool is_valid_normalized(const BBox& b) {
  if (!(b.w >= 0.0 && b.w <= 1.0 && b.h >= 0.0 && b.h <= 1.0)) return false;
  return b.x1() >= 0.0 && b.x0() <= 1.0 && b.y1() >= 0.0 && b.y0() <= 1.0;
}

namespace {

double intersection(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  return iw * ih;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou(const PixelBox& a, const PixelBox& b) { return iou(a.center_form(), b.center_form()); }

double giou(const BBox& a, const BBox& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double ew = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  const double eh = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  const double enclose = ew * eh;
  if (!(enclose > 0.0)) throw std::invalid_argument("giou: degenerate boxes");
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return i - (enclose - uni) / enclose;
}

PixelBox clamp_to_frame(const PixelBox& b, double width, double height) {
  double x0 = std::clamp(b.x, 0.0, width - 1.0);
  double y0 = std::clamp(b.y, 0.0, height - 1.0);
  double x1 = std::clamp(b.x + b.w, x0 + 1.0, width);
  double y1 = std::clamp(b.y + b.h, y0 + 1.0, height);
  return PixelBox{x0, y0, x1 - x0, y1 - y0};
}

std::string to_string(const BBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "(cx=%.4f, cy=%.4f, w=%.4f, h=%.4f)", b.cx, b.cy, b.w, b.h);
  return buf;
}

}  // namespace grtrack

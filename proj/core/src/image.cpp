#include "grtrack/image.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "grtrack/errors.hpp"

namespace grtrack {

std::array<double, 3> Image::channel_means() const {
  std::array<double, 3> sum{0, 0, 0};
  const std::size_t n = width * height;
  if (n == 0) return sum;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) sum[c] += rgb[i * 3 + c];
  for (auto& s : sum) s /= static_cast<double>(n);
  return sum;
}

namespace {

// Next header token, skipping whitespace and comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (ppm_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(ppm_token(in));
    h = std::stoul(ppm_token(in));
    maxval = std::stoul(ppm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (maxval != 255 || w == 0 || h == 0) throw DataError(path.string() + ": unsupported PPM (need maxval 255)");
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw DataError(path.string() + ": truncated pixels");
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

BBox CropTransform::to_crop(const PixelBox& b) const {
  const BBox c = b.center_form();
  return BBox{(c.cx - x0) / side, (c.cy - y0) / side, c.w / side, c.h / side};
}

PixelBox CropTransform::to_frame(const BBox& b) const {
  return PixelBox::from_center(BBox{x0 + b.cx * side, y0 + b.cy * side, b.w * side, b.h * side});
}

double crop_side(const PixelBox& box, double area_factor) { return std::sqrt(area_factor * box.w * box.h); }

Crop crop_at(const Image& frame, double cx, double cy, double side, std::size_t out_size) {
  if (!(side > 0.0) || out_size == 0) throw std::invalid_argument("crop_at: empty crop");
  Crop crop;
  crop.size = out_size;
  crop.transform = CropTransform{cx - 0.5 * side, cy - 0.5 * side, side};
  crop.chw.assign(3 * out_size * out_size, 0.0);
  const auto mean = frame.channel_means();
  const double step = side / static_cast<double>(out_size);
  const auto w = static_cast<long>(frame.width), h = static_cast<long>(frame.height);
  for (std::size_t i = 0; i < out_size; ++i) {
    // pixel centres: frame coordinate of output row i
    const double fy = crop.transform.y0 + (static_cast<double>(i) + 0.5) * step - 0.5;
    const double yf = std::floor(fy);
    const long y_lo = static_cast<long>(yf);
    const double ty = fy - yf;
    for (std::size_t j = 0; j < out_size; ++j) {
      const double fx = crop.transform.x0 + (static_cast<double>(j) + 0.5) * step - 0.5;
      const double xf = std::floor(fx);
      const long x_lo = static_cast<long>(xf);
      const double tx = fx - xf;
      for (std::size_t c = 0; c < 3; ++c) {
        auto px = [&](long x, long y) {
          return (x < 0 || y < 0 || x >= w || y >= h) ? mean[c]
                                                      : static_cast<double>(frame.at(static_cast<std::size_t>(x),
                                                                                     static_cast<std::size_t>(y), c));
        };
        const double v = (1 - ty) * ((1 - tx) * px(x_lo, y_lo) + tx * px(x_lo + 1, y_lo)) +
                         ty * ((1 - tx) * px(x_lo, y_lo + 1) + tx * px(x_lo + 1, y_lo + 1));
        crop.chw[(c * out_size + i) * out_size + j] = normalize_pixel(v);
      }
    }
  }
  return crop;
}

Crop crop_region(const Image& frame, const PixelBox& box, double area_factor, std::size_t out_size) {
  if (!(box.w > 0.0 && box.h > 0.0)) throw std::invalid_argument("crop_region: zero-size box");
  if (!(area_factor >= 1.0)) throw std::invalid_argument("crop_region: area factor must be >= 1");
  const BBox c = box.center_form();
  return crop_at(frame, c.cx, c.cy, crop_side(box, area_factor), out_size);
}

}  // namespace grtrack

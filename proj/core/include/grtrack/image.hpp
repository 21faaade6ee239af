#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "grtrack/box.hpp"

namespace grtrack {

/// 8-bit RGB image, rows top to bottom, channels interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  std::array<double, 3> channel_means() const;
  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255). Throws DataError on malformed input.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

/// Maps between frame pixels and a square crop normalised to [0,1].
struct CropTransform {
  double x0 = 0.0;    // crop top-left in frame pixels
  double y0 = 0.0;
  double side = 1.0;  // crop side in frame pixels

  BBox to_crop(const PixelBox& b) const;
  PixelBox to_frame(const BBox& b) const;
};

struct Crop {
  std::vector<double> chw;  // 3 x out x out, roughly zero-centred
  std::size_t size = 0;
  CropTransform transform;
};

/// Crop side for a box and area factor: sqrt(factor * w * h).
double crop_side(const PixelBox& box, double area_factor);

/// Square crop of side sqrt(area_factor * w * h) centred on the box,
/// bilinearly resampled to out_size, with out-of-frame pixels filled by the
/// frame's channel means. Throws std::invalid_argument on empty boxes or
/// area_factor < 1.
Crop crop_region(const Image& frame, const PixelBox& box, double area_factor, std::size_t out_size);

/// Same, with the crop centre and side given explicitly.
Crop crop_at(const Image& frame, double cx, double cy, double side, std::size_t out_size);

/// Byte value to the network's input scale.
inline double normalize_pixel(double v) { return (v / 255.0 - 0.5) * 4.0; }

}  // namespace grtrack

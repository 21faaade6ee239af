#include "grtrack/head.hpp"

#include <algorithm>
#include <cmath>

#include "grtrack/ops.hpp"

namespace grtrack {

namespace {

Tensor conv_weight(std::size_t out, std::size_t in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * 9));
  std::vector<double> data(out * in * 9);
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor({out, in, 3, 3}, std::move(data), true);
}

}  // namespace

Tensor ConvBranch::operator()(const Tensor& x) const {
  auto h = ops::relu(ops::conv2d(x, w1, b1, 1));
  h = ops::relu(ops::conv2d(h, w2, b2, 1));
  return ops::sigmoid(ops::conv2d(h, w3, b3, 1));
}

ConvBranch ConvBranch::init(std::size_t in, std::size_t c1, std::size_t c2, std::size_t out, Rng& rng,
                            double out_bias) {
  ConvBranch b;
  b.w1 = conv_weight(c1, in, rng);
  b.b1 = Tensor::zeros({c1}, true);
  b.w2 = conv_weight(c2, c1, rng);
  b.b2 = Tensor::zeros({c2}, true);
  b.w3 = conv_weight(out, c2, rng);
  for (auto& v : b.w3.mutable_data()) v *= 0.1;
  b.b3 = Tensor::full({out}, out_bias, true);
  return b;
}

void ConvBranch::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".conv1.weight", w1});
  out.push_back({prefix + ".conv1.bias", b1});
  out.push_back({prefix + ".conv2.weight", w2});
  out.push_back({prefix + ".conv2.bias", b2});
  out.push_back({prefix + ".conv3.weight", w3});
  out.push_back({prefix + ".conv3.bias", b3});
}

HeadParams HeadParams::init(const EncoderConfig& cfg, Rng& rng) {
  const std::size_t c1 = cfg.head_channels.at(0), c2 = cfg.head_channels.at(1);
  HeadParams h;
  // Score prior of ~0.1 keeps the initial focal loss bounded.
  h.score = ConvBranch::init(cfg.dim, c1, c2, 1, rng, -2.19);
  h.offset = ConvBranch::init(cfg.dim, c1, c2, 2, rng);
  h.size = ConvBranch::init(cfg.dim, c1, c2, 2, rng, -1.0);
  return h;
}

void HeadParams::collect(const std::string& prefix, ParamList& out) const {
  score.collect(prefix + ".score", out);
  offset.collect(prefix + ".offset", out);
  size.collect(prefix + ".size", out);
}

ScoreMaps head_forward(const Tensor& search_tokens, const HeadParams& head) {
  const std::size_t n = search_tokens.dim(0), c = search_tokens.dim(1);
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) {
    throw DimensionError("head_forward: " + std::to_string(n) + " search tokens do not form a square grid");
  }
  auto map = ops::reshape(ops::transpose(search_tokens), {c, g, g});
  return ScoreMaps{head.score(map), head.offset(map), head.size(map)};
}

ScoreMaps head_forward(const TokenSeq& search_tokens, const HeadParams& head) {
  return head_forward(search_tokens.embeddings, head);
}

Cell peak_cell(const ScoreMaps& maps) {
  const auto r = maps.score.data();
  const std::size_t g = maps.grid();
  std::size_t best = 0;
  for (std::size_t i = 1; i < g * g; ++i) {
    if (r[i] > r[best]) best = i;
  }
  return Cell{best % g, best / g};
}

BBox assemble_box(const ScoreMaps& maps) {
  const std::size_t g = maps.grid();
  const Cell c = peak_cell(maps);
  const std::size_t at = c.y * g + c.x;
  const auto e = maps.offset.data();
  const auto o = maps.size.data();
  const double gd = static_cast<double>(g);
  return BBox{(static_cast<double>(c.x) + e[at]) / gd, (static_cast<double>(c.y) + e[g * g + at]) / gd, o[at],
              o[g * g + at]};
}

Tensor box_at_cell(const ScoreMaps& maps, Cell cell) {
  const std::size_t g = maps.grid();
  const std::size_t at = cell.y * g + cell.x;
  const double inv = 1.0 / static_cast<double>(g);
  auto cx = ops::scale(ops::add_scalar(ops::element(maps.offset, at), static_cast<double>(cell.x)), inv);
  auto cy = ops::scale(ops::add_scalar(ops::element(maps.offset, g * g + at), static_cast<double>(cell.y)), inv);
  std::vector<Tensor> parts{cx, cy, ops::element(maps.size, at), ops::element(maps.size, g * g + at)};
  return ops::pack(parts);
}

Cell center_cell(const BBox& box, std::size_t grid) {
  const double gd = static_cast<double>(grid);
  auto idx = [&](double v) {
    const double f = std::floor(v * gd);
    return static_cast<std::size_t>(std::clamp(f, 0.0, gd - 1.0));
  };
  return Cell{idx(box.cx), idx(box.cy)};
}

namespace {

// CenterNet's radius for which a box shifted by it keeps IoU >= min_overlap.
double gaussian_radius(double height, double width, double min_overlap = 0.7) {
  const double b1 = height + width;
  const double c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
  const double b2 = 2 * (height + width);
  const double c2 = (1 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
  const double a3 = 4 * min_overlap;
  const double b3 = -2 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::max(0.0, std::min({r1, r2, r3}));
}

}  // namespace

Tensor gaussian_target(const BBox& gt, std::size_t grid) {
  const double gd = static_cast<double>(grid);
  const double radius = gaussian_radius(gt.h * gd, gt.w * gd);
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  const Cell c = center_cell(gt, grid);
  std::vector<double> out(grid * grid);
  for (std::size_t y = 0; y < grid; ++y)
    for (std::size_t x = 0; x < grid; ++x) {
      const double dx = static_cast<double>(x) - static_cast<double>(c.x);
      const double dy = static_cast<double>(y) - static_cast<double>(c.y);
      out[y * grid + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  return Tensor({1, grid, grid}, std::move(out));
}

}  // namespace grtrack

#pragma once

#include <cstddef>
#include <span>

#include "grtrack/box.hpp"
#include "grtrack/encoder.hpp"
#include "grtrack/rng.hpp"
#include "grtrack/tensor.hpp"

namespace grtrack {

/// Decoder outputs on the G x G search grid, all sigmoid-bounded.
struct ScoreMaps {
  Tensor score;   // R [1, G, G]: target-center likelihood
  Tensor offset;  // E [2, G, G]: sub-cell (x, y) offset
  Tensor size;    // O [2, G, G]: (w, h) normalised to the crop

  std::size_t grid() const { return score.dim(1); }
};

/// Three 3x3 conv layers: C -> c1 -> c2 -> out, ReLU between, sigmoid after.
struct ConvBranch {
  Tensor w1, b1, w2, b2, w3, b3;

  Tensor operator()(const Tensor& x) const;
  static ConvBranch init(std::size_t in, std::size_t c1, std::size_t c2, std::size_t out, Rng& rng,
                         double out_bias = 0.0);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct HeadParams {
  ConvBranch score, offset, size;

  static HeadParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Reshapes N_x = G*G search tokens into a [C, G, G] map and runs the branches.
ScoreMaps head_forward(const Tensor& search_tokens, const HeadParams& head);
ScoreMaps head_forward(const TokenSeq& search_tokens, const HeadParams& head);

/// Grid cell (column x, row y).
struct Cell {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const Cell&) const = default;
};

/// argmax of R, ties to the lowest row-major index.
Cell peak_cell(const ScoreMaps& maps);

/// Box decoded at the peak of R, in crop-normalised units.
BBox assemble_box(const ScoreMaps& maps);

/// The decoded box at a fixed cell as a differentiable [4] tensor (cx, cy, w, h).
Tensor box_at_cell(const ScoreMaps& maps, Cell cell);

/// Cell containing the box center.
Cell center_cell(const BBox& box, std::size_t grid);

/// Gaussian heatmap [1, G, G] with peak 1 at the gt center cell and a
/// radius that grows with the box size (CenterNet overlap rule).
Tensor gaussian_target(const BBox& gt, std::size_t grid);

}  // namespace grtrack

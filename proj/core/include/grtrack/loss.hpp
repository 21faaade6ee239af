#pragma once

#include <span>
#include <vector>

#include "grtrack/tensor.hpp"

namespace grtrack {

/// Penalty-reduced pixel-wise focal loss over a score map against a
/// Gaussian target, normalised by the number of exact-peak pixels:
///   target == 1:  -(1-p)^alpha log p
///   otherwise:    -(1-target)^beta p^alpha log(1-p)
Tensor focal_loss(const Tensor& score, const Tensor& target, double alpha = 2.0, double beta = 4.0);

/// Mean absolute error between two equally shaped tensors.
Tensor l1_loss(const Tensor& pred, const Tensor& gt);

/// 1 - GIoU for [4] (cx, cy, w, h) boxes. Throws std::invalid_argument when
/// the ground-truth box has zero width or height.
Tensor giou_loss(const Tensor& pred, const Tensor& gt);

/// Keep-ratio supervision:
///   L = 1/(B S) sum_b sum_s (q_s - mean(D^{b,s}))^2
/// decisions[b][s] is the keep mask of stage s for batch item b.
Tensor ratio_loss(std::span<const std::vector<Tensor>> decisions, std::span<const double> ratios);

struct LossWeights {
  double score = 1.0;
  double iou = 2.0;
  double l1 = 5.0;
  double ratio = 1.0;
};

struct LossParts {
  Tensor focal;
  Tensor giou;
  Tensor l1;
  Tensor ratio;
};

/// Weighted sum of the four objectives. Throws NumericError naming the
/// first non-finite part.
Tensor total_loss(const LossParts& parts, const LossWeights& weights = {});

}  // namespace grtrack

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "grtrack/tensor.hpp"

namespace grtrack {

/// One scalar coordinate of a parameter tensor to probe.
struct ParamCoordinate {
  Tensor param;
  std::size_t index;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;  // position in the probed list
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probed = 0;
};

/// Compares reverse-mode gradients of `loss` against central differences.
///
/// `loss` must rebuild its graph from the current parameter values on every
/// call and be deterministic (freeze any noise). The error per coordinate is
/// |analytic - numeric| / max(1, |numeric|). Throws NumericError if the loss
/// is non-finite at any evaluation.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss, const std::vector<ParamCoordinate>& coords,
                                  double eps = 1e-5);

/// Every coordinate of each tensor.
std::vector<ParamCoordinate> all_coordinates(const std::vector<Tensor>& params);

/// Up to `per_tensor` evenly spread coordinates of each tensor, deterministic.
std::vector<ParamCoordinate> sampled_coordinates(const std::vector<Tensor>& params, std::size_t per_tensor,
                                                 std::uint64_t seed);

}  // namespace grtrack

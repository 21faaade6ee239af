#pragma once

#include <vector>

#include "grtrack/rng.hpp"
#include "grtrack/tensor.hpp"

namespace grtrack::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace grtrack::testing

#include "grtrack/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "grtrack/rng.hpp"

namespace grtrack {

namespace {

double eval_finite(const std::function<Tensor()>& loss) {
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss, const std::vector<ParamCoordinate>& coords,
                                  double eps) {
  for (const auto& c : coords) {
    auto p = c.param;
    p.zero_grad();
  }
  {
    Tensor l = loss();
    if (!std::isfinite(l.item())) throw NumericError("finite_diff_check: loss is not finite");
    l.backward();
  }
  std::vector<double> analytic(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto& c = coords[i];
    analytic[i] = c.param.has_grad() ? c.param.grad()[c.index] : 0.0;
  }

  GradCheckReport report;
  report.probed = coords.size();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    Tensor p = coords[i].param;
    double& slot = p.mutable_data()[coords[i].index];
    const double saved = slot;
    slot = saved + eps;
    const double up = eval_finite(loss);
    slot = saved - eps;
    const double down = eval_finite(loss);
    slot = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_coordinate = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  for (const auto& c : coords) {
    auto p = c.param;
    p.zero_grad();
  }
  return report;
}

std::vector<ParamCoordinate> all_coordinates(const std::vector<Tensor>& params) {
  std::vector<ParamCoordinate> out;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.numel(); ++i) out.push_back({p, i});
  return out;
}

std::vector<ParamCoordinate> sampled_coordinates(const std::vector<Tensor>& params, std::size_t per_tensor,
                                                 std::uint64_t seed) {
  std::vector<ParamCoordinate> out;
  Rng rng(seed);
  for (const auto& p : params) {
    if (p.numel() <= per_tensor) {
      for (std::size_t i = 0; i < p.numel(); ++i) out.push_back({p, i});
      continue;
    }
    std::set<std::size_t> picked;
    while (picked.size() < per_tensor) picked.insert(static_cast<std::size_t>(rng.below(p.numel())));
    for (auto i : picked) out.push_back({p, i});
  }
  return out;
}

}  // namespace grtrack

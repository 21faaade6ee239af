#include "grtrack/loss.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "grtrack/errors.hpp"
#include "grtrack/ops.hpp"

namespace grtrack {

namespace {

constexpr double kProbEps = 1e-6;

Tensor power(const Tensor& x, double a) {
  if (a == 2.0) return ops::square(x);
  if (a == 1.0) return x;
  return ops::exp(ops::scale(ops::log(x), a));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor focal_loss(const Tensor& score, const Tensor& target, double alpha, double beta) {
  require_same_shape(score, target, "focal_loss");
  const auto t = target.data();
  const std::size_t n = t.size();
  std::vector<double> pos(n), neg_w(n);
  double num_pos = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] == 1.0) {
      pos[i] = 1.0;
      num_pos += 1.0;
    } else {
      neg_w[i] = std::pow(1.0 - t[i], beta);
    }
  }
  auto p = ops::clamp(score, kProbEps, 1.0 - kProbEps);
  auto one_minus_p = ops::add_scalar(ops::neg(p), 1.0);
  auto pos_term = ops::mul(ops::mul(power(one_minus_p, alpha), ops::log(p)), Tensor(score.shape(), pos));
  auto neg_term = ops::mul(ops::mul(power(p, alpha), ops::log(one_minus_p)), Tensor(score.shape(), neg_w));
  auto total = ops::neg(ops::add(ops::sum(pos_term), ops::sum(neg_term)));
  return ops::scale(total, 1.0 / std::max(1.0, num_pos));
}

Tensor l1_loss(const Tensor& pred, const Tensor& gt) {
  require_same_shape(pred, gt, "l1_loss");
  return ops::mean(ops::abs(ops::sub(pred, gt)));
}

Tensor giou_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != Shape{4}) throw DimensionError("giou_loss: pred must be [4], got " + shape_str(pred.shape()));
  require_same_shape(pred, gt, "giou_loss");
  if (!(gt.data()[2] > 0.0 && gt.data()[3] > 0.0)) {
    throw std::invalid_argument("giou_loss: ground-truth box has zero width or height");
  }
  auto corners = [](const Tensor& b) {
    auto cx = ops::element(b, 0), cy = ops::element(b, 1);
    auto hw = ops::scale(ops::element(b, 2), 0.5), hh = ops::scale(ops::element(b, 3), 0.5);
    return std::array<Tensor, 4>{ops::sub(cx, hw), ops::sub(cy, hh), ops::add(cx, hw), ops::add(cy, hh)};
  };
  const auto a = corners(pred);
  const auto b = corners(gt);
  auto iw = ops::relu(ops::sub(ops::minimum(a[2], b[2]), ops::maximum(a[0], b[0])));
  auto ih = ops::relu(ops::sub(ops::minimum(a[3], b[3]), ops::maximum(a[1], b[1])));
  auto inter = ops::mul(iw, ih);
  auto area_a = ops::mul(ops::relu(ops::sub(a[2], a[0])), ops::relu(ops::sub(a[3], a[1])));
  auto area_b = ops::mul(ops::sub(b[2], b[0]), ops::sub(b[3], b[1]));
  auto uni = ops::sub(ops::add(area_a, area_b), inter);
  auto ew = ops::sub(ops::maximum(a[2], b[2]), ops::minimum(a[0], b[0]));
  auto eh = ops::sub(ops::maximum(a[3], b[3]), ops::minimum(a[1], b[1]));
  auto enclose = ops::mul(ew, eh);
  auto g = ops::sub(ops::div(inter, uni), ops::div(ops::sub(enclose, uni), enclose));
  return ops::add_scalar(ops::neg(g), 1.0);
}

Tensor ratio_loss(std::span<const std::vector<Tensor>> decisions, std::span<const double> ratios) {
  if (decisions.empty()) throw std::invalid_argument("ratio_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& stages : decisions) {
    if (stages.size() != ratios.size()) {
      throw DimensionError("ratio_loss: " + std::to_string(stages.size()) + " stages but " +
                           std::to_string(ratios.size()) + " target ratios");
    }
    for (std::size_t s = 0; s < stages.size(); ++s) {
      terms.push_back(ops::square(ops::add_scalar(ops::mean(stages[s]), -ratios[s])));
    }
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return ops::mean(ops::pack(terms));
}

Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  const std::pair<const char*, const Tensor*> named[] = {
      {"focal", &parts.focal}, {"giou", &parts.giou}, {"l1", &parts.l1}, {"ratio", &parts.ratio}};
  for (const auto& [name, t] : named) {
    if (!t->defined()) throw std::invalid_argument(std::string("total_loss: missing term ") + name);
    if (!std::isfinite(t->item())) {
      throw NumericError(std::string("total_loss: non-finite ") + name + " term (" + std::to_string(t->item()) + ")");
    }
  }
  auto l = ops::scale(parts.focal, w.score);
  l = ops::add(l, ops::scale(parts.giou, w.iou));
  l = ops::add(l, ops::scale(parts.l1, w.l1));
  return ops::add(l, ops::scale(parts.ratio, w.ratio));
}

}  // namespace grtrack

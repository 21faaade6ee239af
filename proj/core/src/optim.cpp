#include "grtrack/optim.hpp"

#include <cmath>

#include "grtrack/model.hpp"

namespace grtrack {

AdamW::AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    lr_.push_back(is_fast_param(p.name) ? cfg_.lr_fast : cfg_.lr_slow);
    // no decay on biases, norms or position tables
    decay_.push_back(p.tensor.rank() >= 2 && p.name.find("pos_") == std::string::npos);
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::step(double lr_scale) {
  ++t_;
  double clip = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& p : params_)
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const double lr = lr_[i] * lr_scale;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      if (decay_[i]) w[j] -= lr * cfg_.weight_decay * w[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  zero_grad();
}

}  // namespace grtrack

#pragma once

#include <cstdint>
#include <vector>

#include "grtrack/encoder.hpp"

namespace grtrack {

struct AdamWConfig {
  double lr_fast = 4e-4;  // ranking MLPs and head
  double lr_slow = 4e-5;  // everything else
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

/// Decoupled-weight-decay Adam over a named parameter list. The learning
/// rate tier of each tensor is fixed at construction.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig cfg);

  /// Applies one update from the accumulated grads, then clears them.
  /// `lr_scale` multiplies both tiers (schedules).
  void step(double lr_scale = 1.0);
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const ParamList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::vector<double> lr_;
  std::vector<bool> decay_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace grtrack

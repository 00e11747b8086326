// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lafr/nn/parameter.hpp"

namespace lafr::nn {

struct AdamMoments {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamSettings with(double learning_rate, const AdamMoments& m) {
    return {learning_rate, m.beta1, m.beta2, m.epsilon};
  }
};

/// Bias-corrected Adam without weight decay. Frozen parameters are skipped.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamSettings settings) : params_(std::move(params)), s_(settings) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  /// Applies grad * grad_scale and clears all gradients.
  void step(double grad_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      if (p.trainable) {
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
          const double g = static_cast<double>(p.grad[j]) * grad_scale;
          m[j] = s_.beta1 * m[j] + (1.0 - s_.beta1) * g;
          v[j] = s_.beta2 * v[j] + (1.0 - s_.beta2) * g * g;
          const double update = s_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + s_.epsilon);
          p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - update);
        }
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  long steps() const { return t_; }
  void set_learning_rate(double lr) { s_.learning_rate = lr; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamSettings s_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

/// Cosine decay from `base` to `base * floor_fraction` over `total` steps.
inline double cosine_learning_rate(double base, long step, long total, double floor_fraction) {
  if (total <= 1) return base;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
  const double floor = base * floor_fraction;
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(t * 3.14159265358979323846));
}

}  // namespace lafr::nn

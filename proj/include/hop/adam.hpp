#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace hop {

/// Plain Adam. `direction` produces the update without applying it, for
/// parameters that live on a manifold.
class Adam {
 public:
  explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void direction(std::span<const double> grad, std::span<double> step) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      step[i] = -lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  void step(std::span<double> params, std::span<const double> grad) {
    std::vector<double> d(params.size());
    direction(grad, d);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += d[i];
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::size_t size() const { return m_.size(); }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace hop

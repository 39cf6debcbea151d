#include "dsamgn/optim.hpp"

#include <cmath>

namespace dsamgn {

void SgdMomentum::step(const NamedTensors& params, double lr) {
  if (velocity_.empty()) {
    for (const auto& [name, p] : params) velocity_.emplace_back(p.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double grad = g[j] + weight_decay_ * w[j];
      vel[j] = momentum_ * vel[j] + grad;
      w[j] -= lr * vel[j];
    }
  }
}

void Adam::step(const NamedTensors& params, double lr) {
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double grad = g[j] + weight_decay_ * w[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad * grad;
      w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
    }
  }
}

}  // namespace dsamgn

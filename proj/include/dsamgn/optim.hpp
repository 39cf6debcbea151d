#pragma once

#include <vector>

#include "dsamgn/graph_block.hpp"

namespace dsamgn {

/// Applies one update from the accumulated gradients. Parameters must be
/// passed in the same order on every step.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const NamedTensors& params, double lr) = 0;
};

class SgdMomentum final : public Optimizer {
 public:
  explicit SgdMomentum(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(const NamedTensors& params, double lr) override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  void step(const NamedTensors& params, double lr) override;

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dsamgn

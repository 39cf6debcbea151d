#pragma once

#include <cmath>

#include "dsamgn/rng.hpp"
#include "dsamgn/tensor.hpp"

namespace dsamgn {

/// Uniform in ±sqrt(6 / (fan_in + fan_out)), marked trainable.
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  t.set_requires_grad(true);
  return t;
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = stddev * rng.normal();
  t.set_requires_grad(true);
  return t;
}

inline Tensor zeros_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace dsamgn

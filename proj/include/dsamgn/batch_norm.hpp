#pragma once

#include <cstddef>
#include <vector>

#include "dsamgn/tensor.hpp"

namespace dsamgn {

/// Learnable scale/shift plus running statistics for 1-D batch normalization.
struct BatchNormState {
  explicit BatchNormState(std::size_t channels);

  Tensor gamma;  // learnable scale, init 1
  Tensor beta;   // learnable shift, init 0
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  std::size_t channels() const { return running_mean.size(); }
};

/// Normalizes a B×C batch. Training mode uses biased batch statistics and
/// folds them into the running estimates (unbiased variance); eval mode uses
/// the running estimates. Training requires B >= 2.
Tensor batch_norm_1d(const Tensor& x, BatchNormState& state, bool training);

}  // namespace dsamgn

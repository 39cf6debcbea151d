#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsamgn/ops.hpp"
#include "dsamgn/rng.hpp"
#include "dsamgn/tensor.hpp"

namespace dsamgn::test {

/// Uniform entries in [lo, hi); requires_grad is set on request.
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false);

/// Entries drawn from [lo, hi) with random sign, so |x| >= lo.
Tensor away_from_zero(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad);

/// sum(y ⊙ R) for a fixed random R, turning any output into a scalar whose
/// gradient exercises every output entry.
Tensor probe(const Tensor& y, std::uint64_t seed = 99);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "input[i] analytic=… numeric=…"
};

/// Compares the tape gradient of `loss` with central differences on every
/// entry of every tensor in `inputs`. The relative error is
/// |a - n| / max(|a|, |n|, 1e-3); the floor keeps entries with a true
/// gradient of zero from turning rounding noise into a large ratio.
GradCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          double h = 1e-6);

/// Same, for named parameters.
GradCheck check_gradients(const std::function<Tensor()>& loss,
                          const std::vector<std::pair<std::string, Tensor>>& named,
                          double h = 1e-6);

/// Random orthogonal d×d matrix (Gram-Schmidt on a Gaussian draw).
Tensor random_orthogonal(std::size_t d, Rng& rng);

}  // namespace dsamgn::test

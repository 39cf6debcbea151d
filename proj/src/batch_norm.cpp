#include "dsamgn/batch_norm.hpp"

#include <cmath>
#include <string>

#include "dsamgn/errors.hpp"

namespace dsamgn {

BatchNormState::BatchNormState(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0)),
      beta(Tensor::zeros({channels})),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

Tensor batch_norm_1d(const Tensor& x, BatchNormState& state, bool training) {
  if (x.rank() != 2 || x.dim(1) != state.channels()) {
    throw DimensionError("batch_norm_1d: input " + shape_string(x.shape()) + " for " +
                         std::to_string(state.channels()) + " channels");
  }
  const std::size_t b = x.dim(0), c = x.dim(1);
  if (training && b < 2) {
    throw DimensionError("batch_norm_1d: training mode needs at least 2 samples, got " +
                         std::to_string(b));
  }
  auto xd = x.data();
  auto gd = state.gamma.data();
  auto bd = state.beta.data();

  std::vector<double> mu(c), inv_std(c);
  if (training) {
    for (std::size_t j = 0; j < c; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < b; ++i) m += xd[i * c + j];
      m /= static_cast<double>(b);
      double v = 0.0;
      for (std::size_t i = 0; i < b; ++i) v += (xd[i * c + j] - m) * (xd[i * c + j] - m);
      v /= static_cast<double>(b);
      mu[j] = m;
      inv_std[j] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased = v * static_cast<double>(b) / static_cast<double>(b - 1);
      state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * m;
      state.running_var[j] =
          (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
  }

  Tensor out({b, c});
  std::vector<double> xhat(b * c);
  auto o = out.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xd[i * c + j] - mu[j]) * inv_std[j];
      o[i * c + j] = gd[j] * xhat[i * c + j] + bd[j];
    }

  Tape* tape = active_tape();
  if (tape == nullptr ||
      !(x.requires_grad() || state.gamma.requires_grad() || state.beta.requires_grad())) {
    return out;
  }
  out.set_requires_grad(true);
  Tensor gamma = state.gamma;
  Tensor beta = state.beta;
  tape->record({x, gamma, beta}, out,
               [out, x, gamma, beta, xhat, inv_std, b, c, training]() mutable {
    auto g = out.grad();
    auto gd = gamma.data();
    std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        dgamma[j] += g[i * c + j] * xhat[i * c + j];
        dbeta[j] += g[i * c + j];
      }
    if (x.requires_grad()) {
      std::vector<double> dx(b * c);
      const double nb = static_cast<double>(b);
      for (std::size_t j = 0; j < c; ++j) {
        if (!training) {
          for (std::size_t i = 0; i < b; ++i) dx[i * c + j] = g[i * c + j] * gd[j] * inv_std[j];
          continue;
        }
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
          const double dxh = g[i * c + j] * gd[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat[i * c + j];
        }
        for (std::size_t i = 0; i < b; ++i) {
          const double dxh = g[i * c + j] * gd[j];
          dx[i * c + j] =
              inv_std[j] / nb * (nb * dxh - sum_dxhat - xhat[i * c + j] * sum_dxhat_xhat);
        }
      }
      x.accumulate_grad(dx);
    }
    if (gamma.requires_grad()) gamma.accumulate_grad(dgamma);
    if (beta.requires_grad()) beta.accumulate_grad(dbeta);
  });
  return out;
}

}  // namespace dsamgn

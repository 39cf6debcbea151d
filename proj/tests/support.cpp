#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dsamgn::test {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor away_from_zero(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(shape);
  for (double& v : t.data()) {
    const double mag = rng.uniform(lo, hi);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r = random_tensor(y.shape(), rng, -1.0, 1.0);
  return sum(mul(y, r));
}

GradCheck check_gradients(const std::function<Tensor()>& loss,
                          const std::vector<std::pair<std::string, Tensor>>& named, double h) {
  for (const auto& [name, t] : named) t.clear_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(loss());
  }

  GradCheck out;
  for (const auto& [name, param] : named) {
    Tensor t = param;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + h;
      const double up = loss().item();
      t.data()[i] = orig - h;
      const double down = loss().item();
      t.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      const double err = std::abs(analytic[i] - numeric) / scale;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s[%zu] analytic=%.12g numeric=%.12g", name.c_str(), i,
                      analytic[i], numeric);
        out.worst = buf;
      }
    }
    t.clear_grad();
  }
  return out;
}

GradCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          double h) {
  std::vector<std::pair<std::string, Tensor>> named;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    named.emplace_back("input" + std::to_string(i), inputs[i]);
  }
  return check_gradients(loss, named, h);
}

Tensor random_orthogonal(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> q;
  while (q.size() < d) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (const auto& u : q) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    q.push_back(std::move(v));
  }
  return Tensor::matrix(q);
}

}  // namespace dsamgn::test

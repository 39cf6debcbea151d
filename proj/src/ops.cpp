#include "dsamgn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dsamgn/errors.hpp"

namespace dsamgn {

namespace {

template <class Fn>
void attach(Tensor& out, std::vector<Tensor> inputs, Fn&& backward) {
  Tape* tape = active_tape();
  if (tape == nullptr) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return;
  out.set_requires_grad(true);
  tape->record(std::move(inputs), out, std::forward<Fn>(backward));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + " expects a rank-" + std::to_string(rank) +
                         " tensor, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// c (m×n) += a (m×k) · b (k×n), all row-major
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  attach(out, {a, b}, [out, a, b, m, k, n]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      // dA = dC · Bᵀ
      std::vector<double> da(m * k, 0.0);
      auto bd = b.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) da[i * k + p] += gv * bd[p * n + j];
        }
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      // dB = Aᵀ · dC
      std::vector<double> db(k * n, 0.0);
      auto ad = a.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += av * g[i * n + j];
        }
      b.accumulate_grad(db);
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  attach(out, {a}, [out, a, m, n]() mutable {
    auto g = out.grad();
    std::vector<double> da(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] = g[j * m + i];
    a.accumulate_grad(da);
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + bd[i];
  attach(out, {a, b}, [out, a, b]() mutable {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) b.accumulate_grad(out.grad());
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] - bd[i];
  attach(out, {a, b}, [out, a, b]() mutable {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) {
      std::vector<double> neg(out.grad().begin(), out.grad().end());
      for (auto& v : neg) v = -v;
      b.accumulate_grad(neg);
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
  attach(out, {a, b}, [out, a, b]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      std::vector<double> da(g.size());
      auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bd[i];
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      std::vector<double> db(g.size());
      auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * ad[i];
      b.accumulate_grad(db);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * factor;
  attach(out, {a}, [out, a, factor]() mutable {
    auto g = out.grad();
    std::vector<double> da(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * factor;
    a.accumulate_grad(da);
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double value) {
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + value;
  attach(out, {a}, [out, a]() mutable { a.accumulate_grad(out.grad()); });
  return out;
}

Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row_vector");
  require_rank(bias, 1, "add_row_vector");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_row_vector: " + shape_string(a.shape()) + " + " +
                         shape_string(bias.shape()));
  }
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = ad[i * n + j] + bd[j];
  attach(out, {a, bias}, [out, a, bias, m, n]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) a.accumulate_grad(g);
    if (bias.requires_grad()) {
      std::vector<double> db(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      bias.accumulate_grad(db);
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > 0.0 || std::isnan(xd[i]) ? xd[i] : 0.0;
  attach(out, {x}, [out, x]() mutable {
    auto g = out.grad();
    auto xd = x.data();
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = xd[i] > 0.0 ? g[i] : 0.0;
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double* orow = o.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  attach(out, {x}, [out, x, m, n]() mutable {
    auto g = out.grad();
    auto y = out.data();
    std::vector<double> dx(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
    }
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  require_rank(x, 2, "log_softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = row[j] - lse;
  }
  attach(out, {x}, [out, x, m, n]() mutable {
    auto g = out.grad();
    auto y = out.data();
    std::vector<double> dx(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        dx[i * n + j] = g[i * n + j] - std::exp(y[i * n + j]) * gs;
    }
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  attach(out, {x}, [out, x]() mutable {
    std::vector<double> dx(x.numel(), out.grad()[0]);
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  require_rank(x, 2, "mean_over_axis");
  if (axis > 1) throw DimensionError("mean_over_axis: axis must be 0 or 1");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const std::size_t len = axis == 0 ? m : n;
  if (len == 0) throw DimensionError("mean_over_axis over an empty axis");
  Tensor out({axis == 0 ? n : m});
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[axis == 0 ? j : i] += xd[i * n + j];
  for (auto& v : o) v /= static_cast<double>(len);
  attach(out, {x}, [out, x, m, n, axis, len]() mutable {
    auto g = out.grad();
    std::vector<double> dx(m * n);
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = g[axis == 0 ? j : i] * inv;
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  attach(out, {x}, [out, x]() mutable { x.accumulate_grad(out.grad()); });
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank(p, 2, "concat");
  const std::size_t fixed = parts.front().dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != fixed) {
      throw DimensionError("concat: " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    total += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  Tensor out({rows, cols});
  auto o = out.data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    auto pd = p.data();
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? off + i : i;
        const std::size_t c = axis == 0 ? j : off + j;
        o[r * cols + c] = pd[i * pc + j];
      }
    off += p.dim(axis);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  attach(out, inputs, [out, inputs, offsets, axis, cols]() mutable {
    auto g = out.grad();
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto& p = inputs[t];
      if (!p.requires_grad()) continue;
      const std::size_t pr = p.dim(0), pc = p.dim(1);
      std::vector<double> dp(pr * pc);
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) {
          const std::size_t r = axis == 0 ? offsets[t] + i : i;
          const std::size_t c = axis == 0 ? j : offsets[t] + j;
          dp[i * pc + j] = g[r * cols + c];
        }
      p.accumulate_grad(dp);
    }
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat(parts, 1);
}

std::vector<Tensor> split_channels(const Tensor& x, std::size_t parts) {
  require_rank(x, 2, "split_channels");
  const std::size_t m = x.dim(0), c = x.dim(1);
  if (parts == 0 || c % parts != 0) {
    throw DimensionError("split_channels: " + std::to_string(c) + " channels cannot be split into " +
                         std::to_string(parts) + " equal parts");
  }
  const std::size_t w = c / parts;
  std::vector<Tensor> outs;
  auto xd = x.data();
  for (std::size_t p = 0; p < parts; ++p) {
    Tensor out({m, w});
    auto o = out.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) o[i * w + j] = xd[i * c + p * w + j];
    attach(out, {x}, [out, x, m, c, w, p]() mutable {
      auto g = out.grad();
      std::vector<double> dx(m * c, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) dx[i * c + p * w + j] = g[i * w + j];
      x.accumulate_grad(dx);
    });
    outs.push_back(out);
  }
  return outs;
}

Tensor select(const Tensor& x, std::size_t index) {
  if (x.rank() == 0) throw DimensionError("select on a scalar");
  if (index >= x.dim(0)) {
    throw DimensionError("select index " + std::to_string(index) + " out of range for " +
                         shape_string(x.shape()));
  }
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const std::size_t stride = shape_numel(rest);
  auto xd = x.data();
  Tensor out(rest, std::vector<double>(xd.begin() + index * stride,
                                       xd.begin() + (index + 1) * stride));
  attach(out, {x}, [out, x, index, stride]() mutable {
    auto g = out.grad();
    std::vector<double> dx(x.numel(), 0.0);
    std::copy(g.begin(), g.end(), dx.begin() + index * stride);
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("stack of zero tensors");
  const Shape& inner = items.front().shape();
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw DimensionError("stack: " + shape_string(inner) + " vs " + shape_string(t.shape()));
    }
  }
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t stride = shape_numel(inner);
  Tensor out(shape);
  auto o = out.data();
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto d = items[k].data();
    std::copy(d.begin(), d.end(), o.begin() + k * stride);
  }
  std::vector<Tensor> inputs(items.begin(), items.end());
  attach(out, inputs, [out, inputs, stride]() mutable {
    auto g = out.grad();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!inputs[k].requires_grad()) continue;
      inputs[k].accumulate_grad(g.subspan(k * stride, stride));
    }
  });
  return out;
}

Tensor masked(const Tensor& x, std::span<const std::uint8_t> keep) {
  if (keep.size() != x.numel()) {
    throw DimensionError("masked: mask of length " + std::to_string(keep.size()) + " for " +
                         shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = keep[i] ? xd[i] : 0.0;
  std::vector<std::uint8_t> mask(keep.begin(), keep.end());
  attach(out, {x}, [out, x, mask]() mutable {
    auto g = out.grad();
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = mask[i] ? g[i] : 0.0;
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor gather(const Tensor& x, std::span<const std::size_t> flat_indices) {
  Tensor out({flat_indices.size()});
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= xd.size()) {
      throw DimensionError("gather index " + std::to_string(flat_indices[i]) +
                           " out of range for " + shape_string(x.shape()));
    }
    o[i] = xd[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  attach(out, {x}, [out, x, idx]() mutable {
    auto g = out.grad();
    std::vector<double> dx(x.numel(), 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += g[i];
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor pairwise_distance(const Tensor& x, double eps) {
  require_rank(x, 2, "pairwise_distance");
  const std::size_t b = x.dim(0), c = x.dim(1);
  Tensor out({b, b});
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = xd[i * c + k] - xd[j * c + k];
        s += d * d;
      }
      o[i * b + j] = std::sqrt(s + eps);
    }
  attach(out, {x}, [out, x, b, c]() mutable {
    auto g = out.grad();
    auto d = out.data();
    auto xd = x.data();
    std::vector<double> dx(b * c, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        if (i == j) continue;
        const double coef = g[i * b + j] / d[i * b + j];
        if (coef == 0.0) continue;
        for (std::size_t k = 0; k < c; ++k) {
          const double diff = xd[i * c + k] - xd[j * c + k];
          dx[i * c + k] += coef * diff;
          dx[j * c + k] -= coef * diff;
        }
      }
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  require_rank(b, 1, "conv2d");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || b.dim(0) != cout) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  }
  if (stride == 0 || h + 2 * padding < k || wd + 2 * padding < k) {
    throw DimensionError("conv2d: kernel does not fit input " + shape_string(x.shape()));
  }
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (wd + 2 * padding - k) / stride + 1;
  Tensor out({batch, cout, oh, ow});
  auto o = out.data();
  auto xd = x.data();
  auto wdat = w.data();
  auto bd = b.data();

  // Visits every (output, weight, input) triple that contributes.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::size_t oi = ((n * cout + oc) * oh + y) * ow + xo;
            for (std::size_t ic = 0; ic < cin; ++ic)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride + kx) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                  const std::size_t xi =
                      ((n * cin + ic) * h + static_cast<std::size_t>(iy)) * wd +
                      static_cast<std::size_t>(ix);
                  const std::size_t wi = ((oc * cin + ic) * k + ky) * k + kx;
                  fn(oi, wi, xi);
                }
              }
          }
  };

  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t p = 0; p < oh * ow; ++p) o[(n * cout + oc) * oh * ow + p] = bd[oc];
  for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) {
    o[oi] += wdat[wi] * xd[xi];
  });

  attach(out, {x, w, b}, [out, x, w, b, for_each_tap, batch, cout, oh, ow]() mutable {
    auto g = out.grad();
    auto xd = x.data();
    auto wdat = w.data();
    std::vector<double> dx(x.numel(), 0.0), dw(w.numel(), 0.0), db(cout, 0.0);
    for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) {
      dx[xi] += g[oi] * wdat[wi];
      dw[wi] += g[oi] * xd[xi];
    });
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t p = 0; p < oh * ow; ++p) db[oc] += g[(n * cout + oc) * oh * ow + p];
    if (x.requires_grad()) x.accumulate_grad(dx);
    if (w.requires_grad()) w.accumulate_grad(dw);
    if (b.requires_grad()) b.accumulate_grad(db);
  });
  return out;
}

Tensor spatial_mean(const Tensor& x) {
  require_rank(x, 4, "spatial_mean");
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("spatial_mean over an empty map");
  Tensor out({b, c});
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < b * c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += xd[i * hw + p];
    o[i] = s / static_cast<double>(hw);
  }
  attach(out, {x}, [out, x, b, c, hw]() mutable {
    auto g = out.grad();
    std::vector<double> dx(b * c * hw);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < b * c; ++i)
      for (std::size_t p = 0; p < hw; ++p) dx[i * hw + p] = g[i] * inv;
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor reshape_to_patches(const Tensor& f) {
  require_rank(f, 4, "reshape_to_patches");
  const std::size_t b = f.dim(0), c = f.dim(1), n = f.dim(2) * f.dim(3);
  Tensor out({b, n, c});
  auto o = out.data();
  auto fd = f.data();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < n; ++p) o[(s * n + p) * c + ch] = fd[(s * c + ch) * n + p];
  attach(out, {f}, [out, f, b, c, n]() mutable {
    auto g = out.grad();
    std::vector<double> df(b * c * n);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < n; ++p) df[(s * c + ch) * n + p] = g[(s * n + p) * c + ch];
    f.accumulate_grad(df);
  });
  return out;
}

Tensor patches_to_map(const Tensor& p, std::size_t height, std::size_t width) {
  require_rank(p, 3, "patches_to_map");
  const std::size_t b = p.dim(0), n = p.dim(1), c = p.dim(2);
  if (n != height * width) {
    throw DimensionError("patches_to_map: " + std::to_string(n) + " patches for a " +
                         std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  Tensor out({b, c, height, width});
  auto o = out.data();
  auto pd = p.data();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < n; ++q) o[(s * c + ch) * n + q] = pd[(s * n + q) * c + ch];
  attach(out, {p}, [out, p, b, c, n]() mutable {
    auto g = out.grad();
    std::vector<double> dp(b * n * c);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < n; ++q) dp[(s * n + q) * c + ch] = g[(s * c + ch) * n + q];
    p.accumulate_grad(dp);
  });
  return out;
}

}  // namespace dsamgn

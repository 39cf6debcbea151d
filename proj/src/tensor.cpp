#include "dsamgn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dsamgn/errors.hpp"

namespace dsamgn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{}) {}

Tensor::Tensor(Shape shape) : impl_(std::make_shared<Storage>()) {
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.front().size() : 0;
  std::vector<double> flat;
  flat.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged rows in Tensor::matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(flat));
}

Tensor Tensor::vector(const std::vector<double>& values) {
  return Tensor({values.size()}, values);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->data[0];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return impl_->data[i * impl_->shape[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return impl_->data[i * impl_->shape[1] + j];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_mut() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const { impl_->grad.assign(impl_->data.size(), 0.0); }

void Tensor::clear_grad() const { impl_->grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> delta) const {
  auto g = grad_mut();
  if (delta.size() != g.size()) {
    throw DimensionError("gradient of length " + std::to_string(delta.size()) +
                         " for tensor " + shape_string(shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

bool Tensor::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](double v) { return std::isfinite(v); });
}

// --- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  if (consumed_) {
    throw std::logic_error("recording onto a tape that was already replayed; call reset()");
  }
  records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw std::logic_error("backward called twice on the same tape without re-recording");
  }
  if (loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         shape_string(loss.shape()));
  }
  consumed_ = true;
  Tensor seed = loss;
  const double one = 1.0;
  seed.accumulate_grad(std::span<const double>(&one, 1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

void Tape::reset() {
  records_.clear();
  consumed_ = false;
}

}  // namespace dsamgn

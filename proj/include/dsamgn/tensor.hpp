#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsamgn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Use clone() or
/// detach() for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// 2-D convenience constructor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows);
  static Tensor vector(const std::vector<double>& values);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut() const;
  void zero_grad() const;
  void clear_grad() const;
  void accumulate_grad(std::span<const double> delta) const;

  /// Copy of the values with no gradient state.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

/// Ordered record of differentiable operations.
///
/// Operations record themselves into the tape that is active on the calling
/// thread (see TapeScope) whenever at least one input requires grad. With no
/// active tape, ops run forward only.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and replays records in reverse order.
  /// A tape can be replayed once; call reset() before recording again.
  void backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

}  // namespace dsamgn

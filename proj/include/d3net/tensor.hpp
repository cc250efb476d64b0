#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace d3net {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;

std::string shape_string(const Shape& shape);
Index shape_numel(const Shape& shape);

/// Dense row-major double tensor with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage. Operations in
/// ops.hpp / layers.hpp always return fresh tensors, so values are effectively
/// immutable once produced, except for the explicit in-place updates done by
/// the optimizer and by batch-norm running statistics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Array values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor from(Shape shape, std::initializer_list<double> values);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  Index dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t rank() const { return data_->shape.size(); }
  Index numel() const { return data_->value.size(); }

  Array& values() { return data_->value; }
  const Array& values() const { return data_->value; }
  double* data() { return data_->value.data(); }
  const double* data() const { return data_->value.data(); }
  double operator[](Index i) const { return data_->value[i]; }
  double item() const;

  bool requires_grad() const { return data_ && data_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  /// Gradient store; allocated (zero) on first access.
  const Array& grad() const;
  Array& mutable_grad() const;
  bool has_grad() const { return data_ && data_->grad.size() == data_->value.size(); }
  void zero_grad() const;
  /// Releases the gradient store.
  void clear_grad() const;
  void accumulate_grad(const Array& g) const;

  /// Deep copy of the values with no gradient and no tape history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }
  std::uint64_t id() const { return data_ ? data_->id : 0; }

 private:
  struct Storage {
    Shape shape;
    Array value;
    mutable Array grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
  };
  std::shared_ptr<Storage> data_;

  static std::uint64_t next_id();
};

/// Define-by-run record of executed differentiable operations.
///
/// Operations record themselves on the tape installed by the innermost live
/// TapeScope on the current thread, and only when at least one input requires
/// a gradient. Records are appended in execution order, which is a valid
/// topological order.
class ComputeTape {
 public:
  using BackwardRule = std::function<void(const Array& grad_out)>;

  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule backward;
  };

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule);

  /// Seeds d(loss)/d(loss) = 1 and walks the records in reverse once.
  /// Leaf gradients accumulate; intermediate gradients are reset first.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Installs a tape as the current recording target for this thread.
class TapeScope {
 public:
  explicit TapeScope(ComputeTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  ComputeTape* previous_;
};

ComputeTape* active_tape();

/// Returns the active tape when any of `inputs` requires a gradient.
ComputeTape* recording_tape(std::initializer_list<const Tensor*> inputs);

/// backward() on the current thread's active tape.
void backward(const Tensor& loss);

}  // namespace d3net

#include "d3net/tensor.hpp"

#include <atomic>
#include <sstream>
#include <stdexcept>

namespace d3net {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::uint64_t Tensor::next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

Tensor::Tensor(Shape shape, double fill) : data_(std::make_shared<Storage>()) {
  const Index n = shape_numel(shape);
  data_->shape = std::move(shape);
  data_->value = Array::Constant(n, fill);
  data_->id = next_id();
}

Tensor::Tensor(Shape shape, Array values) : data_(std::make_shared<Storage>()) {
  const Index n = shape_numel(shape);
  if (values.size() != n) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) + " does not match shape " +
                                shape_string(shape));
  }
  data_->shape = std::move(shape);
  data_->value = std::move(values);
  data_->id = next_id();
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  Array a(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) a[i++] = v;
  return Tensor(std::move(shape), std::move(a));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.numel(); ++i) t.values()[i] = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.numel(); ++i) t.values()[i] = dist(rng);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
  return data_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  data_->requires_grad = on;
  return *this;
}

const Array& Tensor::grad() const {
  if (data_->grad.size() != data_->value.size()) data_->grad = Array::Zero(data_->value.size());
  return data_->grad;
}

Array& Tensor::mutable_grad() const {
  grad();
  return data_->grad;
}

void Tensor::zero_grad() const {
  if (data_) data_->grad = Array::Zero(data_->value.size());
}

void Tensor::clear_grad() const {
  if (data_) data_->grad.resize(0);
}

void Tensor::accumulate_grad(const Array& g) const {
  if (g.size() != numel()) {
    throw std::logic_error("gradient size " + std::to_string(g.size()) + " does not match tensor " +
                           shape_string(shape()));
  }
  mutable_grad() += g;
}

Tensor Tensor::detach() const { return Tensor(data_->shape, data_->value); }

// ---------------------------------------------------------------------------

namespace {
thread_local ComputeTape* current_tape = nullptr;
}

void ComputeTape::record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
  output.set_requires_grad(true);
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(rule)});
}

void ComputeTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  for (auto& r : records_) {
    Tensor out = r.output;
    out.clear_grad();
  }
  Tensor seed = loss;
  seed.mutable_grad().setOnes();
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    const Array& g = it->output.grad();
    if (!g.isZero(0.0)) it->backward(g);
  }
}

TapeScope::TapeScope(ComputeTape& tape) : previous_(current_tape) { current_tape = &tape; }

TapeScope::~TapeScope() { current_tape = previous_; }

ComputeTape* active_tape() { return current_tape; }

ComputeTape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  if (!current_tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return current_tape;
  }
  return nullptr;
}

void backward(const Tensor& loss) {
  if (!current_tape) throw std::logic_error("backward() called with no active tape");
  current_tape->backward(loss);
}

}  // namespace d3net

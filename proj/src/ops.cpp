#include "d3net/ops.hpp"

#include <stdexcept>

namespace d3net {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

thread_local KinkMonitor* current_monitor = nullptr;

// Outer/inner sizes around `axis` for row-major slicing.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t ax) {
  if (ax >= shape.size()) throw std::invalid_argument("axis " + std::to_string(ax) + " out of range for " + shape_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < ax; ++i) s.outer *= shape[i];
  s.extent = shape[ax];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return sub(a, b);
    case ElementwiseOp::mul: return mul(a, b);
    case ElementwiseOp::relu: return relu(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, double b) {
  switch (op) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return add(a, -b);
    case ElementwiseOp::mul: return mul(a, b);
    case ElementwiseOp::relu: return relu(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.values() + b.values());
  if (auto* tape = recording_tape({&a, &b})) {
    tape->record({a, b}, out, [a, b](const Array& g) mutable {
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(g);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.values() - b.values());
  if (auto* tape = recording_tape({&a, &b})) {
    tape->record({a, b}, out, [a, b](const Array& g) mutable {
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(-g);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.values() * b.values());
  if (auto* tape = recording_tape({&a, &b})) {
    tape->record({a, b}, out, [a, b](const Array& g) mutable {
      if (a.requires_grad()) a.accumulate_grad(g * b.values());
      if (b.requires_grad()) b.accumulate_grad(g * a.values());
    });
  }
  return out;
}

Tensor add(const Tensor& a, double b) {
  Tensor out(a.shape(), a.values() + b);
  if (auto* tape = recording_tape({&a})) {
    tape->record({a}, out, [a](const Array& g) mutable { a.accumulate_grad(g); });
  }
  return out;
}

Tensor mul(const Tensor& a, double b) {
  Tensor out(a.shape(), a.values() * b);
  if (auto* tape = recording_tape({&a})) {
    tape->record({a}, out, [a, b](const Array& g) mutable { a.accumulate_grad(g * b); });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  if (auto* m = KinkMonitor::current()) m->mix(x.values());
  Tensor out(x.shape(), x.values().max(0.0));
  if (auto* tape = recording_tape({&x})) {
    tape->record({x}, out, [x](const Array& g) mutable {
      x.accumulate_grad((x.values() > 0.0).select(g, 0.0));
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape(), 1.0 / (1.0 + (-x.values()).exp()));
  if (auto* tape = recording_tape({&x})) {
    Array s = out.values();
    tape->record({x}, out, [x, s](const Array& g) mutable { x.accumulate_grad(g * s * (1.0 - s)); });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(x.values().sum());
  if (auto* tape = recording_tape({&x})) {
    tape->record({x}, out, [x](const Array& g) mutable { x.accumulate_grad(Array::Constant(x.numel(), g[0])); });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(x.values().sum() / n);
  if (auto* tape = recording_tape({&x})) {
    tape->record({x}, out, [x, n](const Array& g) mutable { x.accumulate_grad(Array::Constant(x.numel(), g[0] / n)); });
  }
  return out;
}

Tensor mse_loss(const Tensor& estimate, const Tensor& target) {
  require_same_shape(estimate, target, "mse_loss");
  const double n = static_cast<double>(estimate.numel());
  Array diff = estimate.values() - target.values();
  Tensor out = Tensor::scalar(diff.square().sum() / n);
  if (auto* tape = recording_tape({&estimate, &target})) {
    tape->record({estimate, target}, out, [estimate, target, diff, n](const Array& g) mutable {
      const Array d = diff * (2.0 * g[0] / n);
      if (estimate.requires_grad()) estimate.accumulate_grad(d);
      if (target.requires_grad()) target.accumulate_grad(-d);
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t ax) {
  if (xs.empty()) throw std::invalid_argument("concat of an empty list");
  if (xs.size() == 1) return xs.front();
  Shape shape = xs.front().shape();
  Index total = 0;
  for (const Tensor& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == shape.size() && ax < s.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == shape[i];
    if (!ok) {
      throw std::invalid_argument("concat: extent mismatch " + shape_string(shape) + " vs " + shape_string(s) +
                                  " along axis " + std::to_string(ax));
    }
    total += s[ax];
  }
  shape[ax] = total;
  Tensor out(shape);
  const AxisSplit os = split_at(shape, ax);
  Index offset = 0;
  std::vector<Index> offsets;
  for (const Tensor& x : xs) {
    const AxisSplit s = split_at(x.shape(), ax);
    const Index block = s.extent * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      out.values().segment(o * os.extent * os.inner + offset * os.inner, block) = x.values().segment(o * block, block);
    }
    offsets.push_back(offset);
    offset += s.extent;
  }
  bool any = false;
  for (const Tensor& x : xs) any = any || x.requires_grad();
  if (ComputeTape* tape = any ? active_tape() : nullptr) {
    tape->record(xs, out, [xs, offsets, os](const Array& g) {
      for (std::size_t k = 0; k < xs.size(); ++k) {
        Tensor x = xs[k];
        if (!x.requires_grad()) continue;
        const AxisSplit s{os.outer, x.numel() / os.outer / os.inner, os.inner};
        const Index block = s.extent * s.inner;
        Array gx(x.numel());
        for (Index o = 0; o < s.outer; ++o) {
          gx.segment(o * block, block) = g.segment(o * os.extent * os.inner + offsets[k] * os.inner, block);
        }
        x.accumulate_grad(gx);
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t ax, Index begin, Index end) {
  const AxisSplit s = split_at(x.shape(), ax);
  if (begin < 0 || end > s.extent || begin >= end) {
    throw std::invalid_argument("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                                shape_string(x.shape()) + " axis " + std::to_string(ax));
  }
  if (begin == 0 && end == s.extent) return x;
  Shape shape = x.shape();
  shape[ax] = end - begin;
  Tensor out(shape);
  const Index block = (end - begin) * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    out.values().segment(o * block, block) = x.values().segment(o * s.extent * s.inner + begin * s.inner, block);
  }
  if (auto* tape = recording_tape({&x})) {
    tape->record({x}, out, [x, s, begin, block](const Array& g) mutable {
      Array gx = Array::Zero(x.numel());
      for (Index o = 0; o < s.outer; ++o) {
        gx.segment(o * s.extent * s.inner + begin * s.inner, block) = g.segment(o * block, block);
      }
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor pad_zeros(const Tensor& x, std::size_t ax, Index extent) {
  const AxisSplit s = split_at(x.shape(), ax);
  if (extent < s.extent) {
    throw std::invalid_argument("pad_zeros: target extent " + std::to_string(extent) + " smaller than " +
                                shape_string(x.shape()));
  }
  if (extent == s.extent) return x;
  Shape shape = x.shape();
  shape[ax] = extent;
  Tensor out(shape);
  const Index src_block = s.extent * s.inner, dst_block = extent * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    out.values().segment(o * dst_block, src_block) = x.values().segment(o * src_block, src_block);
  }
  if (auto* tape = recording_tape({&x})) {
    tape->record({x}, out, [x, s, src_block, dst_block](const Array& g) mutable {
      Array gx(x.numel());
      for (Index o = 0; o < s.outer; ++o) gx.segment(o * src_block, src_block) = g.segment(o * dst_block, src_block);
      x.accumulate_grad(gx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

KinkMonitor::KinkMonitor() : previous_(current_monitor) { current_monitor = this; }

KinkMonitor::~KinkMonitor() { current_monitor = previous_; }

KinkMonitor* KinkMonitor::current() { return current_monitor; }

void KinkMonitor::mix(const Array& pre_activation) {
  // FNV-1a over the sign bits.
  for (Index i = 0; i < pre_activation.size(); ++i) {
    hash_ ^= pre_activation[i] > 0.0 ? 0x9eu : 0x3bu;
    hash_ *= 1099511628211ull;
  }
}

}  // namespace d3net

#pragma once

#include "d3net/tensor.hpp"

#include <cstdint>
#include <vector>

namespace d3net {

enum class ElementwiseOp { add, sub, mul, relu };

/// Elementwise binary op (relu ignores `b`). Shapes must match exactly.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseOp op, const Tensor& a, double b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
/// max(x, 0); the derivative at exactly 0 is taken as 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& estimate, const Tensor& target);

/// Contiguous concatenation along `axis`; every other extent must agree.
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, Index begin, Index end);
/// Zero-extends `axis` to `extent` (appending at the end).
Tensor pad_zeros(const Tensor& x, std::size_t axis, Index extent);

namespace axis {
inline constexpr std::size_t batch = 0;
inline constexpr std::size_t channel = 1;
inline constexpr std::size_t time = 2;
inline constexpr std::size_t frequency = 3;
}  // namespace axis

/// Records rectifier activation patterns while alive (current thread only).
///
/// The finite-difference harness uses the pattern hash to detect perturbations
/// that cross a rectifier kink, where central differences are not meaningful.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t pattern() const { return hash_; }
  void reset() { hash_ = 1469598103934665603ull; }
  void mix(const Array& pre_activation);

  static KinkMonitor* current();

 private:
  std::uint64_t hash_ = 1469598103934665603ull;
  KinkMonitor* previous_;
};

}  // namespace d3net

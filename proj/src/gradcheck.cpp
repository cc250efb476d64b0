#include "d3net/gradcheck.hpp"

#include "d3net/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace d3net {

namespace {

double evaluate(const std::function<Tensor()>& fn, std::uint64_t* pattern) {
  KinkMonitor monitor;
  const Tensor y = fn();
  if (y.numel() != 1) throw std::invalid_argument("finite_diff_check: function must return a scalar, got " + shape_string(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: function returned a non-finite value");
  if (pattern) *pattern = monitor.pattern();
  return v;
}

}  // namespace

FiniteDiffResult finite_diff_check(const std::function<Tensor()>& fn, Tensor x, const FiniteDiffOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  const bool had_grad_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Array analytic;
  {
    ComputeTape tape;
    TapeScope scope(tape);
    const Tensor y = fn();
    if (y.numel() != 1) throw std::invalid_argument("finite_diff_check: function must return a scalar");
    if (!std::isfinite(y.item())) throw std::runtime_error("finite_diff_check: function returned a non-finite value");
    tape.backward(y);
    analytic = x.grad();
  }
  x.zero_grad();
  x.set_requires_grad(had_grad_flag);

  FiniteDiffResult result;
  const Index n = x.numel();
  const Index stride = (options.max_coordinates > 0 && n > options.max_coordinates)
                           ? (n + options.max_coordinates - 1) / options.max_coordinates
                           : 1;
  std::uint64_t base_pattern = 0;
  evaluate(fn, &base_pattern);

  for (Index i = 0; i < n; i += stride) {
    const double original = x.values()[i];
    double h = options.step;
    bool resolved = false;
    double numeric = 0.0;
    for (int attempt = 0; attempt <= options.kink_retries; ++attempt, h /= 10.0) {
      std::uint64_t plus_pattern = 0, minus_pattern = 0;
      x.values()[i] = original + h;
      const double fp = evaluate(fn, &plus_pattern);
      x.values()[i] = original - h;
      const double fm = evaluate(fn, &minus_pattern);
      x.values()[i] = original;
      if (plus_pattern == base_pattern && minus_pattern == base_pattern) {
        numeric = (fp - fm) / (2.0 * h);
        resolved = true;
        break;
      }
    }
    if (!resolved) {
      ++result.skipped;
      continue;
    }
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    ++result.checked;
    if (err > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = std::max(err, result.max_relative_error);
      result.worst_index = i;
    }
  }
  return result;
}

double finite_diff_check(const std::function<Tensor()>& fn, Tensor x, double step) {
  FiniteDiffOptions options;
  options.step = step;
  return finite_diff_check(fn, std::move(x), options).max_relative_error;
}

}  // namespace d3net

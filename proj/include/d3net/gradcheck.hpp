#pragma once

#include "d3net/tensor.hpp"

#include <functional>

namespace d3net {

struct FiniteDiffOptions {
  double step = 1e-5;
  /// Upper bound on checked coordinates (evenly strided); 0 checks all.
  Index max_coordinates = 0;
  /// A perturbation that flips a rectifier is retried with step/10 this many times, then skipped.
  int kink_retries = 3;
};

struct FiniteDiffResult {
  double max_relative_error = 0.0;
  Index worst_index = -1;
  Index checked = 0;
  Index skipped = 0;
};

/// Compares the tape gradient of `fn` w.r.t. `x` with central differences.
///
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|). `fn` must
/// read `x` by handle and return a one-element tensor; it is re-evaluated
/// with x perturbed in place (the original value is restored).
FiniteDiffResult finite_diff_check(const std::function<Tensor()>& fn, Tensor x, const FiniteDiffOptions& options = {});

/// Max relative error over every coordinate at the given step.
double finite_diff_check(const std::function<Tensor()>& fn, Tensor x, double step);

}  // namespace d3net

#pragma once

// Independent reference implementations used only by tests.

#include "d3net/tensor.hpp"

#include <cmath>
#include <vector>

namespace d3net::oracle {

/// Direct six-loop dilated "same" convolution, no padding buffers or GEMM.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, Index dt, Index df) {
  const Index N = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  const Index O = w.dim(0), kt = w.dim(2), kf = w.dim(3);
  Tensor y(Shape{N, O, T, F});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index t = 0; t < T; ++t)
        for (Index f = 0; f < F; ++f) {
          double acc = 0.0;
          for (Index c = 0; c < C; ++c)
            for (Index a = 0; a < kt; ++a)
              for (Index b = 0; b < kf; ++b) {
                const Index ts = t + (a - kt / 2) * dt, fs = f + (b - kf / 2) * df;
                if (ts < 0 || ts >= T || fs < 0 || fs >= F) continue;
                acc += w[((o * C + c) * kt + a) * kf + b] * x[((n * C + c) * T + ts) * F + fs];
              }
          y.values()[((n * O + o) * T + t) * F + f] = acc;
        }
  return y;
}

/// Kernel with d-1 zeros inserted between taps along both axes.
inline Tensor zero_stuff(const Tensor& w, Index d) {
  const Index O = w.dim(0), C = w.dim(1), kt = w.dim(2), kf = w.dim(3);
  const Index et = d * (kt - 1) + 1, ef = d * (kf - 1) + 1;
  Tensor out(Shape{O, C, et, ef});
  for (Index o = 0; o < O; ++o)
    for (Index c = 0; c < C; ++c)
      for (Index a = 0; a < kt; ++a)
        for (Index b = 0; b < kf; ++b)
          out.values()[((o * C + c) * et + a * d) * ef + b * d] = w[((o * C + c) * kt + a) * kf + b];
  return out;
}

/// Train-mode batch normalization followed by max(., 0), written out per element.
inline Tensor naive_psi(const Tensor& x, const Array& gamma, const Array& beta, double eps) {
  const Index N = x.dim(0), C = x.dim(1), inner = x.numel() / (N * C);
  Tensor y(x.shape());
  for (Index c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < inner; ++i) mean += x[(n * C + c) * inner + i];
    mean /= static_cast<double>(N * inner);
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < inner; ++i) var += std::pow(x[(n * C + c) * inner + i] - mean, 2);
    var /= static_cast<double>(N * inner);
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < inner; ++i) {
        const double v = gamma[c] * (x[(n * C + c) * inner + i] - mean) / std::sqrt(var + eps) + beta[c];
        y.values()[(n * C + c) * inner + i] = v > 0.0 ? v : 0.0;
      }
  }
  return y;
}

/// Channel concatenation of [N,C_i,T,F] tensors.
inline Tensor cat_channels(const std::vector<Tensor>& xs) {
  const Index N = xs[0].dim(0), T = xs[0].dim(2), F = xs[0].dim(3);
  Index C = 0;
  for (const Tensor& x : xs) C += x.dim(1);
  Tensor y(Shape{N, C, T, F});
  for (Index n = 0; n < N; ++n) {
    Index c0 = 0;
    for (const Tensor& x : xs) {
      const Index plane = x.dim(1) * T * F;
      y.values().segment((n * C + c0) * T * F, plane) = x.values().segment(n * plane, plane);
      c0 += x.dim(1);
    }
  }
  return y;
}

/// Concatenation of kernels [O, C_i, kt, kf] along input channels.
inline Tensor cat_kernels(const std::vector<Tensor>& ks) {
  const Index O = ks[0].dim(0), kt = ks[0].dim(2), kf = ks[0].dim(3);
  Index C = 0;
  for (const Tensor& k : ks) C += k.dim(1);
  Tensor w(Shape{O, C, kt, kf});
  for (Index o = 0; o < O; ++o) {
    Index c0 = 0;
    for (const Tensor& k : ks) {
      const Index block = k.dim(1) * kt * kf;
      w.values().segment((o * C + c0) * kt * kf, block) = k.values().segment(o * block, block);
      c0 += k.dim(1);
    }
  }
  return w;
}

}  // namespace d3net::oracle

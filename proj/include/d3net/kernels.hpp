#pragma once

// Scalar-generic compute kernels behind the differentiable layers.
//
// Feature planes are row-major [C, T, F] blocks (one batch sample). Dilated
// "same" convolution is evaluated as one GEMM per kernel tap over a
// zero-padded copy of the input, so no im2col buffer is ever materialized.

#include <Eigen/Core>

#include <algorithm>
#include <cstdlib>
#include <vector>

namespace d3net::kernels {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using StridedMap = Eigen::Map<RowMatrix<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename Scalar>
using ConstStridedMap = Eigen::Map<const RowMatrix<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;

/// Padding layout shared by every input piece of one convolution call.
struct ConvGeometry {
  Index T = 0, F = 0;
  Index pt = 0, pf = 0;

  Index Fp() const { return F + 2 * pf; }
  Index Tp() const { return T + 2 * pt; }
  // Guard of pf cells before and after each plane keeps shifted views in bounds.
  Index plane_stride() const { return Tp() * Fp() + 2 * pf; }
  Index columns() const { return T * Fp(); }
  Index tap_offset(Index dt_shift, Index df_shift) const { return pf + (dt_shift + pt) * Fp() + df_shift; }
};

/// Largest in-range tap displacement |a*d| < extent for |a| <= radius.
inline Index reach(Index radius, Index dilation, Index extent) {
  const Index taps = std::min(radius, (extent - 1) / dilation);
  return taps * dilation;
}

inline bool tap_in_range(Index shift, Index extent) { return std::abs(shift) < extent; }

template <typename Scalar>
std::vector<Scalar> pad_plane(const Scalar* x, Index C, const ConvGeometry& g) {
  std::vector<Scalar> out(static_cast<std::size_t>(C * g.plane_stride()), Scalar(0));
  for (Index c = 0; c < C; ++c) {
    Scalar* dst = out.data() + c * g.plane_stride() + g.pf + g.pt * g.Fp() + g.pf;
    const Scalar* src = x + c * g.T * g.F;
    for (Index t = 0; t < g.T; ++t) std::copy(src + t * g.F, src + (t + 1) * g.F, dst + t * g.Fp());
  }
  return out;
}

template <typename Scalar>
void unpad_plane_add(const std::vector<Scalar>& padded, Index C, const ConvGeometry& g, Scalar* x) {
  for (Index c = 0; c < C; ++c) {
    const Scalar* src = padded.data() + c * g.plane_stride() + g.pf + g.pt * g.Fp() + g.pf;
    Scalar* dst = x + c * g.T * g.F;
    for (Index t = 0; t < g.T; ++t) {
      for (Index f = 0; f < g.F; ++f) dst[t * g.F + f] += src[t * g.Fp() + f];
    }
  }
}

/// Kernel tensor [O, in_total, kt, kf]; a piece reads channels [offset, offset + C).
template <typename Scalar>
struct KernelView {
  const Scalar* w;
  Index out_channels, in_total, kt, kf;

  Scalar at(Index o, Index c, Index a, Index b) const { return w[((o * in_total + c) * kt + a) * kf + b]; }
  Index index(Index o, Index c, Index a, Index b) const { return ((o * in_total + c) * kt + a) * kf + b; }
};

template <typename Scalar>
RowMatrix<Scalar> tap_matrix(const KernelView<Scalar>& k, Index offset, Index C, Index a, Index b) {
  RowMatrix<Scalar> m(k.out_channels, C);
  for (Index o = 0; o < k.out_channels; ++o)
    for (Index c = 0; c < C; ++c) m(o, c) = k.at(o, offset + c, a, b);
  return m;
}

/// ypad[O, T*Fp] += conv(x piece) for one sample.
template <typename Scalar>
void conv_piece_forward(const Scalar* x, Index C, const KernelView<Scalar>& k, Index offset, Index dt, Index df,
                        const ConvGeometry& g, RowMatrix<Scalar>& ypad) {
  const std::vector<Scalar> xp = pad_plane(x, C, g);
  const Index rt = k.kt / 2, rf = k.kf / 2;
  for (Index a = -rt; a <= rt; ++a) {
    if (!tap_in_range(a * dt, g.T)) continue;
    for (Index b = -rf; b <= rf; ++b) {
      if (!tap_in_range(b * df, g.F)) continue;
      ConstStridedMap<Scalar> view(xp.data() + g.tap_offset(a * dt, b * df), C, g.columns(),
                                   Eigen::OuterStride<>(g.plane_stride()));
      ypad.noalias() += tap_matrix(k, offset, C, a + rt, b + rf) * view;
    }
  }
}

/// Backward of conv_piece_forward: accumulates into dx [C,T,F] and dw (full kernel layout).
template <typename Scalar>
void conv_piece_backward(const Scalar* x, Index C, const KernelView<Scalar>& k, Index offset, Index dt, Index df,
                         const ConvGeometry& g, const RowMatrix<Scalar>& dypad, Scalar* dx, Scalar* dw) {
  const std::vector<Scalar> xp = pad_plane(x, C, g);
  std::vector<Scalar> dxp;
  if (dx) dxp.assign(xp.size(), Scalar(0));
  const Index rt = k.kt / 2, rf = k.kf / 2;
  for (Index a = -rt; a <= rt; ++a) {
    if (!tap_in_range(a * dt, g.T)) continue;
    for (Index b = -rf; b <= rf; ++b) {
      if (!tap_in_range(b * df, g.F)) continue;
      const Index off = g.tap_offset(a * dt, b * df);
      if (dw) {
        ConstStridedMap<Scalar> view(xp.data() + off, C, g.columns(), Eigen::OuterStride<>(g.plane_stride()));
        const RowMatrix<Scalar> dtap = dypad * view.transpose();
        for (Index o = 0; o < k.out_channels; ++o)
          for (Index c = 0; c < C; ++c) dw[k.index(o, offset + c, a + rt, b + rf)] += dtap(o, c);
      }
      if (dx) {
        StridedMap<Scalar> dview(dxp.data() + off, C, g.columns(), Eigen::OuterStride<>(g.plane_stride()));
        dview.noalias() += tap_matrix(k, offset, C, a + rt, b + rf).transpose() * dypad;
      }
    }
  }
  if (dx) unpad_plane_add(dxp, C, g, dx);
}

/// y[O,T,F] += interior of ypad.
template <typename Scalar>
void extract_interior_add(const RowMatrix<Scalar>& ypad, const ConvGeometry& g, Scalar* y) {
  const Index O = ypad.rows();
  for (Index o = 0; o < O; ++o)
    for (Index t = 0; t < g.T; ++t)
      for (Index f = 0; f < g.F; ++f) y[(o * g.T + t) * g.F + f] += ypad(o, t * g.Fp() + g.pf + f);
}

/// Places dy[O,T,F] into a zeroed padded-column matrix.
template <typename Scalar>
RowMatrix<Scalar> scatter_interior(const Scalar* dy, Index O, const ConvGeometry& g) {
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(O, g.columns());
  for (Index o = 0; o < O; ++o)
    for (Index t = 0; t < g.T; ++t)
      for (Index f = 0; f < g.F; ++f) out(o, t * g.Fp() + g.pf + f) = dy[(o * g.T + t) * g.F + f];
  return out;
}

/// 2x2 mean pooling with edge replication for odd extents: [C,T,F] -> [C,ceil(T/2),ceil(F/2)].
template <typename Scalar>
void avg_pool2x2_forward(const Scalar* x, Index C, Index T, Index F, Scalar* y) {
  const Index To = (T + 1) / 2, Fo = (F + 1) / 2;
  for (Index c = 0; c < C; ++c) {
    const Scalar* xc = x + c * T * F;
    Scalar* yc = y + c * To * Fo;
    for (Index t = 0; t < To; ++t) {
      const Index t0 = 2 * t, t1 = std::min(2 * t + 1, T - 1);
      for (Index f = 0; f < Fo; ++f) {
        const Index f0 = 2 * f, f1 = std::min(2 * f + 1, F - 1);
        yc[t * Fo + f] = Scalar(0.25) * (xc[t0 * F + f0] + xc[t0 * F + f1] + xc[t1 * F + f0] + xc[t1 * F + f1]);
      }
    }
  }
}

template <typename Scalar>
void avg_pool2x2_backward(const Scalar* dy, Index C, Index T, Index F, Scalar* dx) {
  const Index To = (T + 1) / 2, Fo = (F + 1) / 2;
  for (Index c = 0; c < C; ++c) {
    const Scalar* dyc = dy + c * To * Fo;
    Scalar* dxc = dx + c * T * F;
    for (Index t = 0; t < To; ++t) {
      const Index t0 = 2 * t, t1 = std::min(2 * t + 1, T - 1);
      for (Index f = 0; f < Fo; ++f) {
        const Index f0 = 2 * f, f1 = std::min(2 * f + 1, F - 1);
        const Scalar g = Scalar(0.25) * dyc[t * Fo + f];
        dxc[t0 * F + f0] += g;
        dxc[t0 * F + f1] += g;
        dxc[t1 * F + f0] += g;
        dxc[t1 * F + f1] += g;
      }
    }
  }
}

/// Stride-2 transposed conv with a 2x2 kernel w[Ci, Co, 2, 2]: [Ci,T,F] -> y[Co,2T,2F] (accumulating).
template <typename Scalar>
void tconv2x2_forward(const Scalar* x, Index Ci, Index T, Index F, const Scalar* w, Index ci_offset, Index Co,
                      Scalar* y) {
  Eigen::Map<const RowMatrix<Scalar>> X(x, Ci, T * F);
  for (Index a = 0; a < 2; ++a) {
    for (Index b = 0; b < 2; ++b) {
      RowMatrix<Scalar> W(Ci, Co);
      for (Index c = 0; c < Ci; ++c)
        for (Index o = 0; o < Co; ++o) W(c, o) = w[(((ci_offset + c) * Co + o) * 2 + a) * 2 + b];
      const RowMatrix<Scalar> Y = W.transpose() * X;
      for (Index o = 0; o < Co; ++o)
        for (Index t = 0; t < T; ++t)
          for (Index f = 0; f < F; ++f) y[(o * 2 * T + 2 * t + a) * 2 * F + 2 * f + b] += Y(o, t * F + f);
    }
  }
}

template <typename Scalar>
void tconv2x2_backward(const Scalar* x, Index Ci, Index T, Index F, const Scalar* w, Index ci_offset, Index Co,
                       const Scalar* dy, Scalar* dx, Scalar* dw) {
  Eigen::Map<const RowMatrix<Scalar>> X(x, Ci, T * F);
  for (Index a = 0; a < 2; ++a) {
    for (Index b = 0; b < 2; ++b) {
      RowMatrix<Scalar> dY(Co, T * F);
      for (Index o = 0; o < Co; ++o)
        for (Index t = 0; t < T; ++t)
          for (Index f = 0; f < F; ++f) dY(o, t * F + f) = dy[(o * 2 * T + 2 * t + a) * 2 * F + 2 * f + b];
      if (dx) {
        RowMatrix<Scalar> W(Ci, Co);
        for (Index c = 0; c < Ci; ++c)
          for (Index o = 0; o < Co; ++o) W(c, o) = w[(((ci_offset + c) * Co + o) * 2 + a) * 2 + b];
        Eigen::Map<RowMatrix<Scalar>> dX(dx, Ci, T * F);
        dX.noalias() += W * dY;
      }
      if (dw) {
        const RowMatrix<Scalar> dW = X * dY.transpose();
        for (Index c = 0; c < Ci; ++c)
          for (Index o = 0; o < Co; ++o) dw[(((ci_offset + c) * Co + o) * 2 + a) * 2 + b] += dW(c, o);
      }
    }
  }
}

}  // namespace d3net::kernels

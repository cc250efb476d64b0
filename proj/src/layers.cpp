#include "d3net/layers.hpp"

#include "d3net/kernels.hpp"
#include "d3net/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace d3net {

namespace {

using kernels::ConvGeometry;
using kernels::KernelView;
using RowMatrix = kernels::RowMatrix<double>;

struct ConvPiece {
  Tensor x;
  std::size_t kernel;  // index into the kernel list
  Index offset;        // first kernel input channel read by this piece
  Index dilation_t, dilation_f;
};

void require_rank4(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(what) + ": expected [N,C,T,F], got " + shape_string(x.shape()));
}

// Shared engine behind conv2d and multidilated_conv.
Tensor fused_conv(const std::vector<ConvPiece>& pieces, const std::vector<Tensor>& kernel_list,
                  const std::optional<Tensor>& bias) {
  const Tensor& first = pieces.front().x;
  require_rank4(first, "conv");
  const Index N = first.dim(0), T = first.dim(2), F = first.dim(3);
  const Index O = kernel_list.front().dim(0);
  const Index kt = kernel_list.front().dim(2), kf = kernel_list.front().dim(3);

  ConvGeometry g;
  g.T = T;
  g.F = F;
  for (const ConvPiece& p : pieces) {
    require_rank4(p.x, "conv");
    if (p.x.dim(0) != N || p.x.dim(2) != T || p.x.dim(3) != F) {
      throw std::invalid_argument("conv: input pieces disagree on [N,*,T,F]: " + shape_string(first.shape()) + " vs " +
                                  shape_string(p.x.shape()));
    }
    g.pt = std::max(g.pt, kernels::reach(kt / 2, p.dilation_t, T));
    g.pf = std::max(g.pf, kernels::reach(kf / 2, p.dilation_f, F));
  }
  if (bias && bias->numel() != O) {
    throw std::invalid_argument("conv: bias has " + std::to_string(bias->numel()) + " entries for " + std::to_string(O) +
                                " output channels");
  }

  Tensor out(Shape{N, O, T, F});
  for (Index n = 0; n < N; ++n) {
    RowMatrix ypad = RowMatrix::Zero(O, g.columns());
    for (const ConvPiece& p : pieces) {
      const Tensor& k = kernel_list[p.kernel];
      const Index C = p.x.dim(1);
      kernels::conv_piece_forward(p.x.data() + n * C * T * F, C, KernelView<double>{k.data(), O, k.dim(1), kt, kf},
                                  p.offset, p.dilation_t, p.dilation_f, g, ypad);
    }
    kernels::extract_interior_add(ypad, g, out.data() + n * O * T * F);
  }
  if (bias) {
    for (Index n = 0; n < N; ++n)
      for (Index o = 0; o < O; ++o) out.values().segment((n * O + o) * T * F, T * F) += (*bias)[o];
  }

  bool any = bias && bias->requires_grad();
  for (const ConvPiece& p : pieces) any = any || p.x.requires_grad();
  for (const Tensor& k : kernel_list) any = any || k.requires_grad();
  ComputeTape* tape = any ? active_tape() : nullptr;
  if (!tape) return out;

  std::vector<Tensor> inputs;
  for (const ConvPiece& p : pieces) inputs.push_back(p.x);
  for (const Tensor& k : kernel_list) inputs.push_back(k);
  if (bias) inputs.push_back(*bias);

  tape->record(std::move(inputs), out, [pieces, kernel_list, bias, g, N, O, T, F, kt, kf](const Array& dy) {
    std::vector<Array> dk(kernel_list.size());
    for (std::size_t i = 0; i < kernel_list.size(); ++i) {
      if (kernel_list[i].requires_grad()) dk[i] = Array::Zero(kernel_list[i].numel());
    }
    std::vector<Array> dx(pieces.size());
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (pieces[i].x.requires_grad()) dx[i] = Array::Zero(pieces[i].x.numel());
    }
    for (Index n = 0; n < N; ++n) {
      const RowMatrix dypad = kernels::scatter_interior(dy.data() + n * O * T * F, O, g);
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        const ConvPiece& p = pieces[i];
        const Tensor& k = kernel_list[p.kernel];
        const Index C = p.x.dim(1);
        double* dxp = dx[i].size() ? dx[i].data() + n * C * T * F : nullptr;
        double* dwp = dk[p.kernel].size() ? dk[p.kernel].data() : nullptr;
        if (!dxp && !dwp) continue;
        kernels::conv_piece_backward(p.x.data() + n * C * T * F, C, KernelView<double>{k.data(), O, k.dim(1), kt, kf},
                                     p.offset, p.dilation_t, p.dilation_f, g, dypad, dxp, dwp);
      }
    }
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (dx[i].size()) {
        Tensor x = pieces[i].x;
        x.accumulate_grad(dx[i]);
      }
    }
    for (std::size_t i = 0; i < kernel_list.size(); ++i) {
      if (dk[i].size()) {
        Tensor k = kernel_list[i];
        k.accumulate_grad(dk[i]);
      }
    }
    if (bias && bias->requires_grad()) {
      Array db = Array::Zero(O);
      for (Index n = 0; n < N; ++n)
        for (Index o = 0; o < O; ++o) db[o] += dy.segment((n * O + o) * T * F, T * F).sum();
      Tensor b = *bias;
      b.accumulate_grad(db);
    }
  });
  return out;
}

void validate_kernel(const Tensor& k, const char* what) {
  if (k.rank() != 4) throw std::invalid_argument(std::string(what) + ": kernel must be [out,in,kt,kf], got " + shape_string(k.shape()));
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) {
    throw std::invalid_argument(std::string(what) + ": kernel spatial size must be odd, got " + shape_string(k.shape()));
  }
}

}  // namespace

Index MultiDilatedConvParams::in_channels() const {
  Index c = 0;
  for (const auto& g : groups) c += g.in_channels();
  return c;
}

void MultiDilatedConvParams::validate() const {
  if (groups.empty()) throw std::invalid_argument("multidilated conv: no groups");
  const Tensor& k0 = groups.front().kernel;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Tensor& k = groups[i].kernel;
    validate_kernel(k, "multidilated conv");
    if (k.dim(0) != k0.dim(0) || k.dim(2) != k0.dim(2) || k.dim(3) != k0.dim(3)) {
      throw std::invalid_argument("multidilated conv: group " + std::to_string(i) + " kernel " + shape_string(k.shape()) +
                                  " disagrees with group 0 kernel " + shape_string(k0.shape()));
    }
    if (groups[i].dilation < 1) throw std::invalid_argument("multidilated conv: dilation must be >= 1");
  }
}

BatchNormParams BatchNormParams::identity(Index channels) {
  BatchNormParams bn;
  bn.gamma = Tensor(Shape{channels}, 1.0);
  bn.beta = Tensor(Shape{channels}, 0.0);
  bn.running_mean = Tensor(Shape{channels}, 0.0);
  bn.running_var = Tensor(Shape{channels}, 1.0);
  return bn;
}

Tensor init_kernel(Shape shape, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  validate_kernel(p.kernel, "conv2d");
  require_rank4(x, "conv2d");
  if (x.dim(1) != p.in_channels()) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(p.in_channels()) + " input channels, got " +
                                std::to_string(x.dim(1)) + " (input " + shape_string(x.shape()) + ")");
  }
  if (p.dilation_t < 1 || p.dilation_f < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");
  return fused_conv({ConvPiece{x, 0, 0, p.dilation_t, p.dilation_f}}, {p.kernel}, p.bias);
}

Tensor multidilated_conv(const std::vector<std::vector<Tensor>>& groups, const MultiDilatedConvParams& p) {
  p.validate();
  if (groups.size() != p.groups.size()) {
    throw std::invalid_argument("multidilated conv: " + std::to_string(groups.size()) + " input groups for " +
                                std::to_string(p.groups.size()) + " kernel groups");
  }
  std::vector<ConvPiece> pieces;
  std::vector<Tensor> kernel_list;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    Index offset = 0;
    for (const Tensor& piece : groups[i]) {
      require_rank4(piece, "multidilated conv");
      pieces.push_back(ConvPiece{piece, i, offset, p.groups[i].dilation, p.groups[i].dilation});
      offset += piece.dim(1);
    }
    if (offset != p.groups[i].in_channels()) {
      throw std::invalid_argument("multidilated conv: group " + std::to_string(i) + " carries " + std::to_string(offset) +
                                  " channels, kernel expects " + std::to_string(p.groups[i].in_channels()));
    }
    kernel_list.push_back(p.groups[i].kernel);
  }
  return fused_conv(pieces, kernel_list, p.bias);
}

Tensor multidilated_conv(const std::vector<Tensor>& groups, const MultiDilatedConvParams& p) {
  std::vector<std::vector<Tensor>> nested;
  nested.reserve(groups.size());
  for (const Tensor& g : groups) nested.push_back({g});
  return multidilated_conv(nested, p);
}

Tensor batch_norm(const Tensor& x, BatchNormParams& bn) {
  if (x.rank() < 2) throw std::invalid_argument("batch_norm: expected [N,C,...], got " + shape_string(x.shape()));
  const Index N = x.dim(0), C = x.dim(1);
  if (C != bn.channels()) {
    throw std::invalid_argument("batch_norm: expected " + std::to_string(bn.channels()) + " channels, got " +
                                std::to_string(C));
  }
  const Index inner = x.numel() / (N * C);
  const Index count = N * inner;
  if (count == 0) throw std::invalid_argument("batch_norm: empty batch");

  Array mu(C), inv_std(C);
  if (bn.mode == NormMode::train) {
    for (Index c = 0; c < C; ++c) {
      double s = 0.0;
      for (Index n = 0; n < N; ++n) s += x.values().segment((n * C + c) * inner, inner).sum();
      mu[c] = s / static_cast<double>(count);
      double v = 0.0;
      for (Index n = 0; n < N; ++n) v += (x.values().segment((n * C + c) * inner, inner) - mu[c]).square().sum();
      const double var = v / static_cast<double>(count);
      inv_std[c] = 1.0 / std::sqrt(var + bn.eps);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      bn.running_mean.values()[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mu[c];
      bn.running_var.values()[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased;
    }
  } else {
    mu = bn.running_mean.values();
    inv_std = 1.0 / (bn.running_var.values() + bn.eps).sqrt();
  }

  Array xhat(x.numel());
  Tensor out(x.shape());
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Index o = (n * C + c) * inner;
      xhat.segment(o, inner) = (x.values().segment(o, inner) - mu[c]) * inv_std[c];
      out.values().segment(o, inner) = xhat.segment(o, inner) * bn.gamma[c] + bn.beta[c];
    }
  }

  if (auto* tape = recording_tape({&x, &bn.gamma, &bn.beta})) {
    const bool train = bn.mode == NormMode::train;
    Tensor gamma = bn.gamma, beta = bn.beta;
    tape->record({x, gamma, beta}, out, [x, gamma, beta, xhat, inv_std, N, C, inner, count, train](const Array& dy) mutable {
      Array dgamma = Array::Zero(C), dbeta = Array::Zero(C);
      for (Index n = 0; n < N; ++n) {
        for (Index c = 0; c < C; ++c) {
          const Index o = (n * C + c) * inner;
          dgamma[c] += (dy.segment(o, inner) * xhat.segment(o, inner)).sum();
          dbeta[c] += dy.segment(o, inner).sum();
        }
      }
      if (x.requires_grad()) {
        Array dx(x.numel());
        const double m = static_cast<double>(count);
        for (Index c = 0; c < C; ++c) {
          const double gc = gamma[c];
          for (Index n = 0; n < N; ++n) {
            const Index o = (n * C + c) * inner;
            if (train) {
              // dxhat = dy*gamma; dx = inv_std/m * (m*dxhat - Σdxhat - xhat*Σ(dxhat*xhat))
              dx.segment(o, inner) = (inv_std[c] / m) * (m * gc * dy.segment(o, inner) - gc * dbeta[c] -
                                                         xhat.segment(o, inner) * gc * dgamma[c]);
            } else {
              dx.segment(o, inner) = dy.segment(o, inner) * (gc * inv_std[c]);
            }
          }
        }
        x.accumulate_grad(dx);
      }
      if (gamma.requires_grad()) gamma.accumulate_grad(dgamma);
      if (beta.requires_grad()) beta.accumulate_grad(dbeta);
    });
  }
  return out;
}

Tensor composite_psi(const Tensor& x, BatchNormParams& bn) { return relu(batch_norm(x, bn)); }

Tensor avg_pool_2x2(const Tensor& x) {
  require_rank4(x, "avg_pool_2x2");
  const Index N = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  const Index To = (T + 1) / 2, Fo = (F + 1) / 2;
  Tensor out(Shape{N, C, To, Fo});
  kernels::avg_pool2x2_forward(x.data(), N * C, T, F, out.data());
  if (auto* tape = recording_tape({&x})) {
    tape->record({x}, out, [x, N, C, T, F](const Array& dy) mutable {
      Array dx = Array::Zero(x.numel());
      kernels::avg_pool2x2_backward(dy.data(), N * C, T, F, dx.data());
      x.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor transposed_conv_2x2(const std::vector<Tensor>& pieces, const Tensor& kernel) {
  if (pieces.empty()) throw std::invalid_argument("transposed_conv_2x2: no input");
  if (kernel.rank() != 4 || kernel.dim(2) != 2 || kernel.dim(3) != 2) {
    throw std::invalid_argument("transposed_conv_2x2: kernel must be [in,out,2,2], got " + shape_string(kernel.shape()));
  }
  const Tensor& first = pieces.front();
  require_rank4(first, "transposed_conv_2x2");
  const Index N = first.dim(0), T = first.dim(2), F = first.dim(3);
  const Index Co = kernel.dim(1);
  Index total = 0;
  for (const Tensor& p : pieces) {
    require_rank4(p, "transposed_conv_2x2");
    if (p.dim(0) != N || p.dim(2) != T || p.dim(3) != F) {
      throw std::invalid_argument("transposed_conv_2x2: piece " + shape_string(p.shape()) + " disagrees with " +
                                  shape_string(first.shape()));
    }
    total += p.dim(1);
  }
  if (total != kernel.dim(0)) {
    throw std::invalid_argument("transposed_conv_2x2: expected " + std::to_string(kernel.dim(0)) + " input channels, got " +
                                std::to_string(total));
  }
  Tensor out(Shape{N, Co, 2 * T, 2 * F});
  for (Index n = 0; n < N; ++n) {
    Index offset = 0;
    for (const Tensor& p : pieces) {
      const Index Ci = p.dim(1);
      kernels::tconv2x2_forward(p.data() + n * Ci * T * F, Ci, T, F, kernel.data(), offset, Co,
                                out.data() + n * Co * 4 * T * F);
      offset += Ci;
    }
  }
  bool any = kernel.requires_grad();
  for (const Tensor& p : pieces) any = any || p.requires_grad();
  if (ComputeTape* tape = any ? active_tape() : nullptr) {
    std::vector<Tensor> inputs = pieces;
    inputs.push_back(kernel);
    tape->record(std::move(inputs), out, [pieces, kernel, N, T, F, Co](const Array& dy) {
      Array dk = kernel.requires_grad() ? Array::Zero(kernel.numel()) : Array();
      Index offset = 0;
      for (const Tensor& p : pieces) {
        const Index Ci = p.dim(1);
        Array dx = p.requires_grad() ? Array::Zero(p.numel()) : Array();
        for (Index n = 0; n < N; ++n) {
          kernels::tconv2x2_backward(p.data() + n * Ci * T * F, Ci, T, F, kernel.data(), offset, Co,
                                     dy.data() + n * Co * 4 * T * F, dx.size() ? dx.data() + n * Ci * T * F : nullptr,
                                     dk.size() ? dk.data() : nullptr);
        }
        if (dx.size()) {
          Tensor x = p;
          x.accumulate_grad(dx);
        }
        offset += Ci;
      }
      if (dk.size()) {
        Tensor k = kernel;
        k.accumulate_grad(dk);
      }
    });
  }
  return out;
}

Tensor transposed_conv_2x2(const Tensor& x, const Tensor& kernel) {
  return transposed_conv_2x2(std::vector<Tensor>{x}, kernel);
}

}  // namespace d3net

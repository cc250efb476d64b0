#pragma once

#include "d3net/tensor.hpp"

#include <optional>
#include <random>
#include <vector>

namespace d3net {

/// Plain dilated 2-D convolution with "same" zero padding.
struct Conv2dParams {
  Tensor kernel;               // [out_ch, in_ch, k_t, k_f]
  std::optional<Tensor> bias;  // [out_ch]
  Index dilation_t = 1;
  Index dilation_f = 1;

  Index out_channels() const { return kernel.dim(0); }
  Index in_channels() const { return kernel.dim(1); }
};

/// One input-channel group of a multidilated convolution: the filters k^i_l
/// applied to the channels that arrived through skip connection i.
struct DilatedGroup {
  Tensor kernel;  // [out_ch, in_ch_i, k_t, k_f]
  Index dilation = 1;

  Index in_channels() const { return kernel.dim(1); }
};

/// Y ⊛^m k = Σ_i y_i ⊛_{d_i} k^i.
struct MultiDilatedConvParams {
  std::vector<DilatedGroup> groups;
  std::optional<Tensor> bias;

  Index out_channels() const { return groups.front().kernel.dim(0); }
  Index in_channels() const;
  /// Throws unless kernels agree on out_ch and spatial size, and are odd-sized.
  void validate() const;
};

enum class NormMode { train, eval };

struct BatchNormParams {
  Tensor gamma, beta;                 // [ch], learnable
  Tensor running_mean, running_var;   // [ch], buffers
  double eps = 1e-5;
  double momentum = 0.1;
  NormMode mode = NormMode::train;

  static BatchNormParams identity(Index channels);
  Index channels() const { return gamma.numel(); }
};

/// Kernel tensor with fan-in scaled uniform init, bound sqrt(6 / fan_in).
Tensor init_kernel(Shape shape, Index fan_in, std::mt19937_64& rng);

Tensor conv2d(const Tensor& x, const Conv2dParams& p);

/// Per-group dilated convolutions summed into one output. `groups[i]` may be
/// split into several channel pieces whose widths add up to the group's
/// in_ch_i; pieces are consumed in order.
Tensor multidilated_conv(const std::vector<std::vector<Tensor>>& groups, const MultiDilatedConvParams& p);
Tensor multidilated_conv(const std::vector<Tensor>& groups, const MultiDilatedConvParams& p);

/// Batch normalization over (N, T, F) per channel. Train mode uses batch
/// statistics and updates the running buffers in place.
Tensor batch_norm(const Tensor& x, BatchNormParams& bn);

/// ψ(x): batch normalization followed by max-with-0.
Tensor composite_psi(const Tensor& x, BatchNormParams& bn);

/// 2x2 mean pooling; odd T or F is edge-replicated to even first.
Tensor avg_pool_2x2(const Tensor& x);

/// Stride-2 transposed convolution with a learned 2x2 kernel [in_ch, out_ch, 2, 2].
Tensor transposed_conv_2x2(const Tensor& x, const Tensor& kernel);
/// Same, with the input given as channel pieces that together match kernel in_ch.
Tensor transposed_conv_2x2(const std::vector<Tensor>& pieces, const Tensor& kernel);

}  // namespace d3net

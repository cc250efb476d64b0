#pragma once

#include "d3net/layers.hpp"
#include "d3net/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace d3net {

/// A feature map kept as an ordered list of channel pieces [N, c_i, T, F].
/// Dense blocks never concatenate: every consumer accepts the piece list.
using FeatureMap = std::vector<Tensor>;

Index channel_count(const FeatureMap& x);
std::vector<Index> piece_widths(const FeatureMap& x);
/// Channel concatenation of all pieces.
Tensor flatten(const FeatureMap& x);

/// How dilation factors are assigned inside a D2 block.
///   multi:    group i (skip from x_i) uses 2^i
///   standard: every group at layer l uses 2^(l-1)
///   none:     every group uses 1
enum class DilationScheme { multi, standard, none };

DilationScheme parse_dilation_scheme(const std::string& name);
std::string to_string(DilationScheme scheme);

struct D2BlockConfig {
  Index growth_rate = 12;
  Index num_layers = 3;
  Index kernel = 3;
  Index reduction = 0;  // N: how many trailing layer outputs leave the block; 0 means all
  DilationScheme scheme = DilationScheme::multi;
  /// Explicit per-layer dilation lists; entry l-1 must have l values. Empty means use `scheme`.
  std::vector<std::vector<Index>> dilation_override;

  Index reduced_layers() const { return reduction == 0 ? num_layers : reduction; }
  Index out_channels() const { return reduced_layers() * growth_rate; }
  /// Dilations of the l groups entering layer l (1-based).
  std::vector<Index> layer_dilations(Index l) const;
  void validate() const;
};

struct D3BlockConfig {
  D2BlockConfig d2;
  Index num_blocks = 2;  // M

  Index out_channels() const { return d2.out_channels(); }
  void validate() const;
};

/// A trainable or persistent tensor together with its hierarchical name.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using TensorList = std::vector<NamedTensor>;

/// The last `n` layer outputs, in order.
FeatureMap channel_reduce(const std::vector<Tensor>& layer_outputs, Index n);

/// Dense block whose layers use multidilated convolution.
///
/// Layer l sees the block input as group 0 and x_1 .. x_(l-1) as groups
/// 1 .. l-1. ψ is applied per piece with its own batch-norm parameters.
class D2Block {
 public:
  struct Layer {
    std::vector<BatchNormParams> norms;  // one per input piece
    MultiDilatedConvParams conv;
  };

  D2Block(const D2BlockConfig& cfg, std::vector<Index> input_widths, std::mt19937_64& rng);

  /// Reduced output (last N layer outputs).
  FeatureMap forward(const FeatureMap& x, NormMode mode);
  /// Every layer output x_1 .. x_L.
  std::vector<Tensor> forward_layers(const FeatureMap& x, NormMode mode);

  const D2BlockConfig& config() const { return cfg_; }
  const std::vector<Index>& input_widths() const { return input_widths_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  void collect_parameters(const std::string& prefix, TensorList& out);
  void collect_buffers(const std::string& prefix, TensorList& out);

 private:
  D2BlockConfig cfg_;
  std::vector<Index> input_widths_;
  std::vector<Layer> layers_;
};

/// M densely connected D2 blocks. Block m receives the D3 input followed by the
/// reduced outputs of blocks 1 .. m-1; those skips join group 0 (dilation restarts).
class D3Block {
 public:
  D3Block(const D3BlockConfig& cfg, std::vector<Index> input_widths, std::mt19937_64& rng);

  FeatureMap forward(const FeatureMap& x, NormMode mode);

  const D3BlockConfig& config() const { return cfg_; }
  std::vector<D2Block>& blocks() { return blocks_; }
  const std::vector<D2Block>& blocks() const { return blocks_; }

  void collect_parameters(const std::string& prefix, TensorList& out);
  void collect_buffers(const std::string& prefix, TensorList& out);

 private:
  D3BlockConfig cfg_;
  std::vector<D2Block> blocks_;
};

void collect_norm(const std::string& prefix, BatchNormParams& bn, TensorList* params, TensorList* buffers);

}  // namespace d3net

#include "d3net/dense_blocks.hpp"

#include "d3net/ops.hpp"

#include <numeric>
#include <stdexcept>

namespace d3net {

Index channel_count(const FeatureMap& x) {
  Index c = 0;
  for (const Tensor& t : x) c += t.dim(1);
  return c;
}

std::vector<Index> piece_widths(const FeatureMap& x) {
  std::vector<Index> w;
  w.reserve(x.size());
  for (const Tensor& t : x) w.push_back(t.dim(1));
  return w;
}

Tensor flatten(const FeatureMap& x) {
  if (x.empty()) throw std::invalid_argument("flatten: empty feature map");
  return concat(x, axis::channel);
}

DilationScheme parse_dilation_scheme(const std::string& name) {
  if (name == "multi") return DilationScheme::multi;
  if (name == "standard") return DilationScheme::standard;
  if (name == "none") return DilationScheme::none;
  throw std::invalid_argument("unknown dilation scheme '" + name + "' (expected multi, standard or none)");
}

std::string to_string(DilationScheme scheme) {
  switch (scheme) {
    case DilationScheme::multi: return "multi";
    case DilationScheme::standard: return "standard";
    case DilationScheme::none: return "none";
  }
  return "?";
}

std::vector<Index> D2BlockConfig::layer_dilations(Index l) const {
  if (l < 1 || l > num_layers) {
    throw std::out_of_range("layer " + std::to_string(l) + " outside 1.." + std::to_string(num_layers));
  }
  if (!dilation_override.empty()) return dilation_override.at(static_cast<std::size_t>(l - 1));
  std::vector<Index> d(static_cast<std::size_t>(l), 1);
  for (Index i = 0; i < l; ++i) {
    switch (scheme) {
      case DilationScheme::multi: d[i] = Index{1} << i; break;
      case DilationScheme::standard: d[i] = Index{1} << (l - 1); break;
      case DilationScheme::none: d[i] = 1; break;
    }
  }
  return d;
}

void D2BlockConfig::validate() const {
  if (growth_rate < 1) throw std::invalid_argument("d2 block: growth rate must be positive");
  if (num_layers < 1) throw std::invalid_argument("d2 block: layer count must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("d2 block: kernel size must be odd");
  if (reduction < 0 || reduction > num_layers) {
    throw std::invalid_argument("d2 block: channel reduction N=" + std::to_string(reduction) + " outside 1.." +
                                std::to_string(num_layers));
  }
  if (!dilation_override.empty()) {
    if (static_cast<Index>(dilation_override.size()) != num_layers) {
      throw std::invalid_argument("d2 block: dilation override needs one list per layer");
    }
    for (std::size_t l = 0; l < dilation_override.size(); ++l) {
      if (dilation_override[l].size() != l + 1) {
        throw std::invalid_argument("d2 block: dilation override for layer " + std::to_string(l + 1) + " needs " +
                                    std::to_string(l + 1) + " entries");
      }
      for (Index d : dilation_override[l]) {
        if (d < 1) throw std::invalid_argument("d2 block: dilations must be >= 1");
      }
    }
  }
}

void D3BlockConfig::validate() const {
  d2.validate();
  if (num_blocks < 1) throw std::invalid_argument("d3 block: needs at least one D2 block");
}

FeatureMap channel_reduce(const std::vector<Tensor>& layer_outputs, Index n) {
  const Index L = static_cast<Index>(layer_outputs.size());
  if (n < 1 || n > L) {
    throw std::invalid_argument("channel_reduce: N=" + std::to_string(n) + " outside 1.." + std::to_string(L));
  }
  return FeatureMap(layer_outputs.end() - n, layer_outputs.end());
}

void collect_norm(const std::string& prefix, BatchNormParams& bn, TensorList* params, TensorList* buffers) {
  if (params) {
    params->push_back({prefix + ".gamma", bn.gamma});
    params->push_back({prefix + ".beta", bn.beta});
  }
  if (buffers) {
    buffers->push_back({prefix + ".running_mean", bn.running_mean});
    buffers->push_back({prefix + ".running_var", bn.running_var});
  }
}

// ---------------------------------------------------------------------------

D2Block::D2Block(const D2BlockConfig& cfg, std::vector<Index> input_widths, std::mt19937_64& rng)
    : cfg_(cfg), input_widths_(std::move(input_widths)) {
  cfg_.validate();
  if (input_widths_.empty()) throw std::invalid_argument("d2 block: no input channels");
  const Index k = cfg_.growth_rate, ks = cfg_.kernel;
  const Index c0 = std::accumulate(input_widths_.begin(), input_widths_.end(), Index{0});
  layers_.reserve(static_cast<std::size_t>(cfg_.num_layers));
  for (Index l = 1; l <= cfg_.num_layers; ++l) {
    Layer layer;
    for (Index w : input_widths_) layer.norms.push_back(BatchNormParams::identity(w));
    for (Index i = 1; i < l; ++i) layer.norms.push_back(BatchNormParams::identity(k));
    const Index fan_in = (c0 + (l - 1) * k) * ks * ks;
    const std::vector<Index> dil = cfg_.layer_dilations(l);
    layer.conv.groups.push_back({init_kernel({k, c0, ks, ks}, fan_in, rng), dil[0]});
    for (Index i = 1; i < l; ++i) layer.conv.groups.push_back({init_kernel({k, k, ks, ks}, fan_in, rng), dil[i]});
    layers_.push_back(std::move(layer));
  }
  TensorList params;
  collect_parameters("", params);
  for (NamedTensor& p : params) p.tensor.set_requires_grad(true);
}

std::vector<Tensor> D2Block::forward_layers(const FeatureMap& x, NormMode mode) {
  if (piece_widths(x) != input_widths_) {
    throw std::invalid_argument("d2 block: input piece widths do not match the block's construction");
  }
  std::vector<Tensor> outputs;
  outputs.reserve(layers_.size());
  for (Layer& layer : layers_) {
    std::vector<std::vector<Tensor>> groups(layer.conv.groups.size());
    std::size_t norm = 0;
    for (const Tensor& piece : x) {
      layer.norms[norm].mode = mode;
      groups[0].push_back(composite_psi(piece, layer.norms[norm++]));
    }
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      layer.norms[norm].mode = mode;
      groups[i + 1].push_back(composite_psi(outputs[i], layer.norms[norm++]));
    }
    outputs.push_back(multidilated_conv(groups, layer.conv));
  }
  return outputs;
}

FeatureMap D2Block::forward(const FeatureMap& x, NormMode mode) {
  return channel_reduce(forward_layers(x, mode), cfg_.reduced_layers());
}

void D2Block::collect_parameters(const std::string& prefix, TensorList& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l + 1);
    for (std::size_t j = 0; j < layers_[l].norms.size(); ++j) {
      collect_norm(lp + ".norm" + std::to_string(j), layers_[l].norms[j], &out, nullptr);
    }
    for (std::size_t g = 0; g < layers_[l].conv.groups.size(); ++g) {
      out.push_back({lp + ".group" + std::to_string(g), layers_[l].conv.groups[g].kernel});
    }
  }
}

void D2Block::collect_buffers(const std::string& prefix, TensorList& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t j = 0; j < layers_[l].norms.size(); ++j) {
      collect_norm(prefix + ".layer" + std::to_string(l + 1) + ".norm" + std::to_string(j), layers_[l].norms[j],
                   nullptr, &out);
    }
  }
}

// ---------------------------------------------------------------------------

D3Block::D3Block(const D3BlockConfig& cfg, std::vector<Index> input_widths, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  std::vector<Index> widths = std::move(input_widths);
  blocks_.reserve(static_cast<std::size_t>(cfg_.num_blocks));
  for (Index m = 0; m < cfg_.num_blocks; ++m) {
    blocks_.emplace_back(cfg_.d2, widths, rng);
    for (Index j = 0; j < cfg_.d2.reduced_layers(); ++j) widths.push_back(cfg_.d2.growth_rate);
  }
}

FeatureMap D3Block::forward(const FeatureMap& x, NormMode mode) {
  FeatureMap pieces = x;
  FeatureMap out;
  for (D2Block& block : blocks_) {
    out = block.forward(pieces, mode);
    pieces.insert(pieces.end(), out.begin(), out.end());
  }
  return out;
}

void D3Block::collect_parameters(const std::string& prefix, TensorList& out) {
  for (std::size_t m = 0; m < blocks_.size(); ++m) blocks_[m].collect_parameters(prefix + ".d2_" + std::to_string(m + 1), out);
}

void D3Block::collect_buffers(const std::string& prefix, TensorList& out) {
  for (std::size_t m = 0; m < blocks_.size(); ++m) blocks_[m].collect_buffers(prefix + ".d2_" + std::to_string(m + 1), out);
}

}  // namespace d3net

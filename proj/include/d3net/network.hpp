#pragma once

#include "d3net/dense_blocks.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace d3net {

/// One step of a band stream.
///   conv:    initial convolution with bias (no ψ before it)
///   d3:      D3 block
///   down:    2x2 average pooling
///   up:      stride-2 2x2 transposed convolution, channel count preserved
///   concat:  channel-concatenate the output of an earlier stage (`with`)
///   project: ψ followed by a 1x1 convolution to `channels`
struct StageConfig {
  enum class Kind { conv, d3, down, up, concat, project };
  Kind kind = Kind::conv;
  std::string id;    // optional label referenced by concat stages
  std::string with;  // concat target
  Index channels = 0;
  Index kernel = 3;
  D3BlockConfig d3;  // scheme and reduction are taken from the network unless set here
  std::optional<DilationScheme> dilation;
  std::optional<Index> reduction;
};

/// A stream over frequency bins [begin, end). `full` streams are merged along
/// channels; the others must tile [0, max_bin) and are merged along frequency.
struct BandConfig {
  std::string name;
  Index begin = 0;
  Index end = 0;
  bool full = false;
  std::vector<StageConfig> stages;
};

struct NetworkConfig {
  std::string name = "unnamed";
  Index in_channels = 2;
  Index max_bin = 1600;
  double sample_rate = 44100.0;
  DilationScheme dilation = DilationScheme::multi;
  Index reduction = 0;  // channel reduction N for every block; 0 means N = L
  std::vector<BandConfig> bands;
  D2BlockConfig final_block;
  Index gate_kernel = 3;
  Index gate_channels = 2;

  static NetworkConfig from_json_text(const std::string& text);
  static NetworkConfig load(const std::string& path);
  std::string to_json_text(int indent = -1) const;

  /// `key` is a dotted path into the JSON form ("dilation", "final.k",
  /// "bands.0.stages.1.k"); `value` is parsed as JSON, falling back to a string.
  void apply_override(const std::string& key, const std::string& value);

  /// Block config of a d3 stage with network-level defaults applied.
  D3BlockConfig resolved_d3(const StageConfig& stage) const;
  D2BlockConfig resolved_final() const;

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
  /// FNV-1a over the canonical JSON form, as 16 hex digits.
  std::string fingerprint() const;
};

/// Directory holding the shipped configs, resolved at build time.
/// FNV-1a of `text` as 16 hex digits.
std::string fingerprint_text(const std::string& text);

std::string default_config_dir();
/// Resolves a config given as a path or as a shipped name ("tiny", "vocals-table1").
NetworkConfig resolve_config(const std::string& path_or_name);

/// The per-source separation network built from a NetworkConfig.
///
/// Maps a mixture magnitude [N, in_ch, T, F_in] to a source magnitude estimate
/// of the same shape. Bins at or above max_bin receive zero.
class Model {
 public:
  Model(NetworkConfig cfg, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  Tensor forward(const Tensor& mixture, NormMode mode);

  const NetworkConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  TensorList parameters();
  TensorList buffers();
  Index parameter_count();

  /// The layer inspected by the skip-weight report: last layer of the final
  /// D2 block of the first D3 block (full-band stream if present). `name`
  /// receives its parameter prefix.
  const D2Block::Layer& weight_norm_layer(std::string* name = nullptr) const;

 private:
  struct Stream;
  NetworkConfig cfg_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Stream>> streams_;
  std::unique_ptr<D2Block> final_block_;
  std::vector<BatchNormParams> final_norms_;
  MultiDilatedConvParams gate_;
};

struct CheckpointInfo {
  std::uint64_t seed = 0;
  Index epoch = 0;
  std::string fingerprint;
};

void save_checkpoint(Model& model, const std::string& path, Index epoch = 0);
/// Rebuilds the model from the embedded config and restores every tensor.
Model load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);
/// Same, but rejects a checkpoint whose config fingerprint differs from `expected`.
Model load_checkpoint(const std::string& path, const NetworkConfig& expected, CheckpointInfo* info = nullptr);

}  // namespace d3net

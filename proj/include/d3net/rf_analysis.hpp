#pragma once

#include "d3net/dense_blocks.hpp"

#include <string>
#include <vector>

namespace d3net::rf {

/// Dilation assignment analysed along one axis.
///   naive: 2^(l-1) at layer l for every incoming skip
///   multi: 2^i for channels coming from x_i
///   none:  1 everywhere
enum class Scheme { naive, multi, none };

Scheme parse_scheme(const std::string& name);
std::string to_string(Scheme scheme);
/// The dense-block dilation scheme implementing `scheme`.
DilationScheme block_scheme(Scheme scheme);

/// "The channels entering layer `layer`'s convolution came from x_`source`."
struct Hop {
  Index layer;
  Index source;
};

/// A chain from the block input x_0 to the output of the last hop's layer,
/// hops ordered from the input outwards.
struct PathSpec {
  std::vector<Hop> hops;

  /// "3<-2<-0"
  std::string to_string() const;
  void validate() const;
};

/// Exact set of input offsets (relative to the output position) touched along one axis.
struct CoverageMap {
  std::vector<Index> offsets;  // sorted, unique

  bool empty() const { return offsets.empty(); }
  Index span_min() const { return offsets.front(); }
  Index span_max() const { return offsets.back(); }
  /// span_max - span_min + 1
  Index width() const;
  Index covered() const { return static_cast<Index>(offsets.size()); }
  Index blind_spot_count() const { return empty() ? 0 : width() - covered(); }
  /// Longest run of uncovered offsets inside the span.
  Index max_gap() const;
  bool operator==(const CoverageMap& other) const { return offsets == other.offsets; }
};

CoverageMap make_coverage(std::vector<Index> offsets);
/// Minkowski sum a ⊕ b.
CoverageMap minkowski(const CoverageMap& a, const CoverageMap& b);
CoverageMap unite(const CoverageMap& a, const CoverageMap& b);
/// Offsets of one dilated kernel: {(j - kernel/2) * dilation}.
CoverageMap kernel_taps(Index kernel, Index dilation);

/// Every chain into layer L: 2^(L-1) paths, direct skip first.
std::vector<PathSpec> enumerate_paths(Index L);

Index hop_dilation(const Hop& hop, Scheme scheme);
CoverageMap path_coverage(const PathSpec& path, Index kernel, Scheme scheme);

/// Receptive field of x_l: union over every chain into layer l ({0} for l = 0).
CoverageMap layer_coverage(Index l, Index kernel, Scheme scheme);

/// Coverage seen through the kernel group that reads x_source at layer `layer`:
/// the full receptive field of x_source dilated by that group's taps.
CoverageMap group_coverage(Index layer, Index source, Index kernel, Scheme scheme);

struct PathRow {
  PathSpec path;
  CoverageMap coverage;
};

struct GroupRow {
  Index layer;
  Index source;
  Index dilation;
  CoverageMap coverage;
};

struct BlockReport {
  Scheme scheme;
  Index layers;
  Index kernel;
  std::vector<PathRow> paths;
  std::vector<GroupRow> groups;  // every (layer, source) pair of the block
  CoverageMap union_coverage;

  Index total_blind_spots() const;
  Index max_gap() const;
  Index paths_with_gaps() const;
  Index groups_with_gaps() const;

  /// Columns: scheme,L,kernel,path_id,path_hops,span_min,span_max,covered,blind_spots.
  /// A final row with path_id "union" describes the union coverage.
  std::string to_csv(bool header = true) const;
  std::string to_text() const;
};

BlockReport block_report(Index L, Index kernel, Scheme scheme);

/// Autodiff probe: input offsets along frequency that influence the centre unit of
/// the last layer output, thresholded at |grad| > threshold. The block is run
/// in eval mode on a zero input line of length `width`.
CoverageMap empirical_coverage(D2Block& block, Index width, double threshold = 1e-12);

/// Sets every ψ of `block` to gamma=0.1, beta=1 with identity running statistics,
/// which keeps every rectifier active on a zero probe.
void linearize_for_probe(D2Block& block);

}  // namespace d3net::rf

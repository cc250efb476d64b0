#include "d3net/rf_analysis.hpp"

#include "d3net/ops.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace d3net::rf {

Scheme parse_scheme(const std::string& name) {
  if (name == "naive") return Scheme::naive;
  if (name == "multi") return Scheme::multi;
  if (name == "none") return Scheme::none;
  throw std::invalid_argument("unknown scheme '" + name + "' (expected naive, multi or none)");
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::naive: return "naive";
    case Scheme::multi: return "multi";
    case Scheme::none: return "none";
  }
  return "?";
}

DilationScheme block_scheme(Scheme scheme) {
  switch (scheme) {
    case Scheme::naive: return DilationScheme::standard;
    case Scheme::multi: return DilationScheme::multi;
    case Scheme::none: return DilationScheme::none;
  }
  return DilationScheme::none;
}

std::string PathSpec::to_string() const {
  std::string s;
  for (auto it = hops.rbegin(); it != hops.rend(); ++it) s += std::to_string(it->layer) + "<-";
  return s + (hops.empty() ? "0" : std::to_string(hops.front().source));
}

void PathSpec::validate() const {
  if (hops.empty()) throw std::invalid_argument("path has no hops");
  if (hops.front().source != 0) throw std::invalid_argument("path must start at the block input x_0");
  for (std::size_t j = 0; j < hops.size(); ++j) {
    if (hops[j].source >= hops[j].layer) throw std::invalid_argument("hop source must precede its layer");
    if (j > 0 && hops[j].source != hops[j - 1].layer) {
      throw std::invalid_argument("path " + to_string() + " is not a chain");
    }
  }
}

Index CoverageMap::width() const { return empty() ? 0 : span_max() - span_min() + 1; }

Index CoverageMap::max_gap() const {
  Index gap = 0;
  for (std::size_t i = 1; i < offsets.size(); ++i) gap = std::max(gap, offsets[i] - offsets[i - 1] - 1);
  return gap;
}

CoverageMap make_coverage(std::vector<Index> offsets) {
  std::sort(offsets.begin(), offsets.end());
  offsets.erase(std::unique(offsets.begin(), offsets.end()), offsets.end());
  return CoverageMap{std::move(offsets)};
}

CoverageMap minkowski(const CoverageMap& a, const CoverageMap& b) {
  std::vector<Index> out;
  out.reserve(a.offsets.size() * b.offsets.size());
  for (Index x : a.offsets)
    for (Index y : b.offsets) out.push_back(x + y);
  return make_coverage(std::move(out));
}

CoverageMap unite(const CoverageMap& a, const CoverageMap& b) {
  std::vector<Index> out = a.offsets;
  out.insert(out.end(), b.offsets.begin(), b.offsets.end());
  return make_coverage(std::move(out));
}

CoverageMap kernel_taps(Index kernel, Index dilation) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd, got " + std::to_string(kernel));
  if (dilation < 1) throw std::invalid_argument("dilation must be >= 1");
  std::vector<Index> taps;
  for (Index j = 0; j < kernel; ++j) taps.push_back((j - kernel / 2) * dilation);
  return CoverageMap{std::move(taps)};
}

std::vector<PathSpec> enumerate_paths(Index L) {
  if (L < 1) throw std::invalid_argument("enumerate_paths: L must be >= 1");
  // Each subset of the intermediate layers 1..L-1 gives one chain; masks are
  // visited in increasing order so the direct skip (empty subset) is first.
  std::vector<PathSpec> paths;
  const Index n = L - 1;
  for (Index mask = 0; mask < (Index{1} << n); ++mask) {
    PathSpec p;
    Index prev = 0;
    for (Index l = 1; l <= n; ++l) {
      if (mask & (Index{1} << (l - 1))) {
        p.hops.push_back({l, prev});
        prev = l;
      }
    }
    p.hops.push_back({L, prev});
    paths.push_back(std::move(p));
  }
  return paths;
}

Index hop_dilation(const Hop& hop, Scheme scheme) {
  switch (scheme) {
    case Scheme::naive: return Index{1} << (hop.layer - 1);
    case Scheme::multi: return Index{1} << hop.source;
    case Scheme::none: return 1;
  }
  return 1;
}

CoverageMap path_coverage(const PathSpec& path, Index kernel, Scheme scheme) {
  path.validate();
  CoverageMap c{{0}};
  for (const Hop& h : path.hops) c = minkowski(c, kernel_taps(kernel, hop_dilation(h, scheme)));
  return c;
}

CoverageMap layer_coverage(Index l, Index kernel, Scheme scheme) {
  if (l < 0) throw std::invalid_argument("layer index must be >= 0");
  std::vector<CoverageMap> rf{CoverageMap{{0}}};
  for (Index m = 1; m <= l; ++m) {
    CoverageMap c;
    for (Index i = 0; i < m; ++i) c = unite(c, minkowski(rf[i], kernel_taps(kernel, hop_dilation({m, i}, scheme))));
    rf.push_back(std::move(c));
  }
  return rf[static_cast<std::size_t>(l)];
}

CoverageMap group_coverage(Index layer, Index source, Index kernel, Scheme scheme) {
  if (source < 0 || source >= layer) throw std::invalid_argument("group source must be in 0..layer-1");
  return minkowski(layer_coverage(source, kernel, scheme), kernel_taps(kernel, hop_dilation({layer, source}, scheme)));
}

Index BlockReport::total_blind_spots() const {
  Index n = 0;
  for (const PathRow& r : paths) n += r.coverage.blind_spot_count();
  return n;
}

Index BlockReport::max_gap() const {
  Index g = 0;
  for (const PathRow& r : paths) g = std::max(g, r.coverage.max_gap());
  return g;
}

Index BlockReport::paths_with_gaps() const {
  return std::count_if(paths.begin(), paths.end(), [](const PathRow& r) { return r.coverage.blind_spot_count() > 0; });
}

Index BlockReport::groups_with_gaps() const {
  return std::count_if(groups.begin(), groups.end(), [](const GroupRow& r) { return r.coverage.blind_spot_count() > 0; });
}

std::string BlockReport::to_csv(bool header) const {
  std::ostringstream os;
  if (header) os << "scheme,L,kernel,path_id,path_hops,span_min,span_max,covered,blind_spots\n";
  auto row = [&](const std::string& id, const std::string& hops, const CoverageMap& c) {
    os << to_string(scheme) << ',' << layers << ',' << kernel << ',' << id << ',' << hops << ',' << c.span_min() << ','
       << c.span_max() << ',' << c.covered() << ',' << c.blind_spot_count() << '\n';
  };
  for (std::size_t i = 0; i < paths.size(); ++i) row(std::to_string(i), paths[i].path.to_string(), paths[i].coverage);
  row("union", "all", union_coverage);
  return os.str();
}

std::string BlockReport::to_text() const {
  std::ostringstream os;
  os << "scheme " << to_string(scheme) << ", L=" << layers << ", kernel " << kernel << ": " << paths.size()
     << " paths into layer " << layers << "\n";
  std::size_t w = 4;
  for (const PathRow& r : paths) w = std::max(w, r.path.to_string().size());
  for (const PathRow& r : paths) {
    const CoverageMap& c = r.coverage;
    os << "  " << std::left << std::setw(static_cast<int>(w)) << r.path.to_string() << "  span [" << c.span_min() << ", "
       << c.span_max() << "]  covered " << c.covered() << "  blind " << c.blind_spot_count() << "  max gap "
       << c.max_gap() << '\n';
  }
  os << "  union span [" << union_coverage.span_min() << ", " << union_coverage.span_max() << "] width "
     << union_coverage.width() << ", blind " << union_coverage.blind_spot_count() << '\n';
  os << "  paths with blind spots: " << paths_with_gaps() << " of " << paths.size() << ", total blind spots "
     << total_blind_spots() << ", longest gap " << max_gap() << '\n';
  os << "  kernel groups (full receptive field of x_i through its taps) with blind spots: " << groups_with_gaps()
     << " of " << groups.size() << '\n';
  for (const GroupRow& g : groups) {
    if (g.coverage.blind_spot_count() == 0) continue;
    os << "    layer " << g.layer << " from x_" << g.source << " (dilation " << g.dilation << "): blind "
       << g.coverage.blind_spot_count() << '\n';
  }
  return os.str();
}

BlockReport block_report(Index L, Index kernel, Scheme scheme) {
  BlockReport r{scheme, L, kernel, {}, {}, {}};
  for (PathSpec& p : enumerate_paths(L)) {
    CoverageMap c = path_coverage(p, kernel, scheme);
    r.union_coverage = unite(r.union_coverage, c);
    r.paths.push_back({std::move(p), std::move(c)});
  }
  for (Index l = 1; l <= L; ++l) {
    for (Index i = 0; i < l; ++i) r.groups.push_back({l, i, hop_dilation({l, i}, scheme), group_coverage(l, i, kernel, scheme)});
  }
  return r;
}

void linearize_for_probe(D2Block& block) {
  for (auto& layer : block.layers()) {
    for (auto& bn : layer.norms) {
      bn.gamma.values().setConstant(0.1);
      bn.beta.values().setConstant(1.0);
      bn.running_mean.values().setZero();
      bn.running_var.values().setOnes();
    }
  }
}

CoverageMap empirical_coverage(D2Block& block, Index width, double threshold) {
  if (width < 1) throw std::invalid_argument("probe width must be positive");
  FeatureMap x;
  for (Index w : block.input_widths()) {
    Tensor piece(Shape{1, w, 1, width});
    piece.set_requires_grad(true);
    x.push_back(piece);
  }
  const Index centre = width / 2;
  ComputeTape tape;
  TapeScope scope(tape);
  const Tensor y = block.forward_layers(x, NormMode::eval).back();
  Tensor pick(y.shape());
  for (Index c = 0; c < y.dim(1); ++c) pick.values()[c * width + centre] = 1.0;
  tape.backward(sum(mul(y, pick)));

  std::vector<Index> offsets;
  for (Index p = 0; p < width; ++p) {
    double g = 0.0;
    for (const Tensor& piece : x) {
      for (Index c = 0; c < piece.dim(1); ++c) g = std::max(g, std::abs(piece.grad()[c * width + p]));
    }
    if (g > threshold) offsets.push_back(p - centre);
  }
  return make_coverage(std::move(offsets));
}

}  // namespace d3net::rf

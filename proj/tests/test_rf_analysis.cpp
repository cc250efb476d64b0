#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "d3net/rf_analysis.hpp"

#include <set>
#include <sstream>

using namespace d3net;
using namespace d3net::rf;

namespace {

// Support of the impulse response of a chain of dilated all-ones 1-D kernels,
// computed by direct convolution on a dense grid.
std::vector<Index> brute_force_support(const std::vector<Index>& dilations, Index kernel) {
  Index reach = 0;
  for (Index d : dilations) reach += (kernel / 2) * d;
  const Index W = 2 * reach + 1;
  std::vector<long long> line(W, 0);
  line[reach] = 1;
  for (Index d : dilations) {
    std::vector<long long> next(W, 0);
    for (Index p = 0; p < W; ++p) {
      for (Index j = -(kernel / 2); j <= kernel / 2; ++j) {
        const Index q = p + j * d;
        if (q >= 0 && q < W) next[p] += line[q];
      }
    }
    line = next;
  }
  std::vector<Index> out;
  for (Index p = 0; p < W; ++p)
    if (line[p] != 0) out.push_back(p - reach);
  return out;
}

const Scheme kSchemes[] = {Scheme::naive, Scheme::multi, Scheme::none};

}  // namespace

TEST_CASE("path enumeration") {
  CHECK(enumerate_paths(1).size() == 1);
  CHECK(enumerate_paths(1)[0].to_string() == "1<-0");
  std::set<std::string> l3;
  for (const PathSpec& p : enumerate_paths(3)) l3.insert(p.to_string());
  CHECK(l3 == std::set<std::string>{"3<-0", "3<-1<-0", "3<-2<-0", "3<-2<-1<-0"});
  CHECK(enumerate_paths(3).front().to_string() == "3<-0");
  for (Index L = 1; L <= 8; ++L) {
    const auto paths = enumerate_paths(L);
    CHECK(paths.size() == (std::size_t{1} << (L - 1)));
    std::set<std::string> distinct;
    for (const PathSpec& p : paths) {
      CHECK_NOTHROW(p.validate());
      CHECK(p.hops.back().layer == L);
      distinct.insert(p.to_string());
    }
    CHECK(distinct.size() == paths.size());
  }
  CHECK_THROWS_AS(enumerate_paths(0), std::invalid_argument);
  PathSpec broken{{{1, 0}, {3, 2}}};
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("hand-composed coverage examples") {
  const PathSpec direct{{{3, 0}}};
  const CoverageMap naive = path_coverage(direct, 3, Scheme::naive);
  CHECK(naive.offsets == std::vector<Index>{-4, 0, 4});
  CHECK(naive.blind_spot_count() == 6);
  CHECK(naive.max_gap() == 3);

  const CoverageMap multi = path_coverage(direct, 3, Scheme::multi);
  CHECK(multi.offsets == std::vector<Index>{-1, 0, 1});
  CHECK(multi.blind_spot_count() == 0);

  for (Scheme s : kSchemes) CHECK(path_coverage(PathSpec{{{1, 0}}}, 3, s).offsets == std::vector<Index>{-1, 0, 1});
}

TEST_CASE("coverage agrees with brute-force impulse propagation") {
  for (Scheme s : kSchemes) {
    for (Index k : {3, 5}) {
      for (Index L = 1; L <= 6; ++L) {
        for (const PathSpec& p : enumerate_paths(L)) {
          std::vector<Index> d;
          for (const Hop& h : p.hops) d.push_back(hop_dilation(h, s));
          INFO(to_string(s) << " k=" << k << " " << p.to_string());
          CHECK(path_coverage(p, k, s).offsets == brute_force_support(d, k));
        }
      }
    }
  }
}

TEST_CASE("naive direct skip closed form") {
  for (Index k : {3, 5, 7}) {
    for (Index l = 1; l <= 8; ++l) {
      const CoverageMap c = path_coverage(PathSpec{{{l, 0}}}, k, Scheme::naive);
      CHECK(c.blind_spot_count() == (k - 1) * ((Index{1} << (l - 1)) - 1));
    }
  }
  for (Index L = 3; L <= 8; ++L) CHECK(block_report(L, 3, Scheme::naive).paths_with_gaps() > 0);
  // only the chain through every layer is gap-free under naive dilation at L=3
  const BlockReport r = block_report(3, 3, Scheme::naive);
  for (const PathRow& row : r.paths) {
    CHECK((row.coverage.blind_spot_count() == 0) == (row.path.to_string() == "3<-2<-1<-0"));
  }
  CHECK(r.union_coverage.blind_spot_count() == 0);
}

TEST_CASE("multidilation per chain: the exact enumeration") {
  // Chains that skip a layer and then re-enter a later one see the later
  // group's dilation without the intermediate smoothing; the enumeration is
  // recorded here as computed.
  const CoverageMap c = path_coverage(PathSpec{{{2, 0}, {3, 2}}}, 3, Scheme::multi);
  CHECK(c.offsets == std::vector<Index>{-5, -4, -3, -1, 0, 1, 3, 4, 5});
  CHECK(c.blind_spot_count() == 2);

  const BlockReport r3 = block_report(3, 3, Scheme::multi);
  CHECK(r3.paths_with_gaps() == 1);
  for (const PathRow& row : r3.paths) {
    if (row.path.to_string() != "3<-2<-0") CHECK(row.coverage.blind_spot_count() == 0);
  }
  CHECK(block_report(1, 3, Scheme::multi).paths_with_gaps() == 0);
  CHECK(block_report(2, 3, Scheme::multi).paths_with_gaps() == 0);
}

TEST_CASE("multidilation kernel groups see gap-free receptive fields") {
  for (Index L = 1; L <= 8; ++L) {
    const BlockReport multi = block_report(L, 3, Scheme::multi);
    CHECK(multi.groups_with_gaps() == 0);
    for (Index l = 0; l <= L; ++l) CHECK(layer_coverage(l, 3, Scheme::multi).blind_spot_count() == 0);
    if (L >= 2) CHECK(block_report(L, 3, Scheme::naive).groups_with_gaps() > 0);
  }
}

TEST_CASE("union receptive field widths") {
  for (Index L = 1; L <= 8; ++L) {
    const BlockReport multi = block_report(L, 3, Scheme::multi);
    CHECK(multi.union_coverage.width() == (Index{1} << (L + 1)) - 1);
    CHECK(multi.union_coverage.blind_spot_count() == 0);
    CHECK(multi.union_coverage == layer_coverage(L, 3, Scheme::multi));

    const BlockReport none = block_report(L, 3, Scheme::none);
    CHECK(none.union_coverage.width() == 2 * L + 1);
    CHECK(none.paths_with_gaps() == 0);
  }
  CHECK(block_report(3, 3, Scheme::multi).union_coverage.width() == 15);
}

TEST_CASE("csv report") {
  const BlockReport r = block_report(3, 3, Scheme::naive);
  std::istringstream in(r.to_csv());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 1 + 4 + 1);
  CHECK(lines[0] == "scheme,L,kernel,path_id,path_hops,span_min,span_max,covered,blind_spots");
  CHECK(lines[1] == "naive,3,3,0,3<-0,-4,4,3,6");
  CHECK(lines.back() == "naive,3,3,union,all,-7,7,15,0");
  for (const std::string& l : lines) CHECK(std::count(l.begin(), l.end(), ',') == 8);
  CHECK(r.to_text().find("3<-0") != std::string::npos);
}

TEST_CASE("autodiff probe matches the analytic union") {
  for (Scheme s : kSchemes) {
    for (Index L = 1; L <= 4; ++L) {
      for (int seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rng(seed);
        D2BlockConfig cfg;
        cfg.growth_rate = 2;
        cfg.num_layers = L;
        cfg.scheme = block_scheme(s);
        D2Block block(cfg, {2}, rng);
        linearize_for_probe(block);
        INFO(to_string(s) << " L=" << L << " seed " << seed);
        CHECK(empirical_coverage(block, 4 * (Index{1} << L) + 1) == layer_coverage(L, 3, s));
      }
    }
  }
}

TEST_CASE("autodiff probe degenerate cases") {
  std::mt19937_64 rng(0);
  D2BlockConfig cfg;
  cfg.growth_rate = 2;
  cfg.num_layers = 3;
  cfg.dilation_override = {{1}, {1, 1}, {1, 1, 1}};
  D2Block ones(cfg, {1}, rng);
  linearize_for_probe(ones);
  const CoverageMap c = empirical_coverage(ones, 33);
  CHECK(c.width() == 2 * 3 + 1);
  CHECK(c.blind_spot_count() == 0);

  cfg.dilation_override.clear();
  D2Block zero(cfg, {1}, rng);
  linearize_for_probe(zero);
  for (auto& layer : zero.layers())
    for (auto& g : layer.conv.groups) g.kernel.values().setZero();
  CHECK(empirical_coverage(zero, 33).empty());
}

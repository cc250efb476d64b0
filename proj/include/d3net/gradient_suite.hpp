#pragma once

#include "d3net/gradcheck.hpp"
#include "d3net/network.hpp"

#include <string>
#include <vector>

namespace d3net {

struct GradCheckRow {
  std::string name;  // "<layer>/<argument>"
  FiniteDiffResult result;
};

/// Finite-difference checks of every differentiable layer type on small
/// shapes (N=2, C<=4, T=F=8), w.r.t. inputs and parameters.
std::vector<GradCheckRow> layer_gradchecks(std::uint64_t seed);

struct NetworkCheckOptions {
  Index batch = 2;
  Index frames = 4;
  /// Input bins. For all-full-band configs max_bin is lowered to this value.
  Index bins = 8;
  /// Coordinates checked per parameter tensor (0 = all).
  Index max_coordinates = 40;
};

/// End-to-end MSE-loss checks of a model built from `cfg`: the input and
/// every parameter tensor.
std::vector<GradCheckRow> network_gradchecks(NetworkConfig cfg, std::uint64_t seed,
                                             const NetworkCheckOptions& options = {});

}  // namespace d3net

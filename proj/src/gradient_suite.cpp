#include "d3net/gradient_suite.hpp"

#include "d3net/dense_blocks.hpp"
#include "d3net/layers.hpp"
#include "d3net/ops.hpp"

#include <algorithm>

namespace d3net {

namespace {

using Fn = std::function<Tensor()>;

void check(std::vector<GradCheckRow>& rows, const std::string& name, const Fn& fn, Tensor x) {
  rows.push_back({name, finite_diff_check(fn, std::move(x), FiniteDiffOptions{})});
}

BatchNormParams random_norm(Index c, std::mt19937_64& rng) {
  BatchNormParams bn = BatchNormParams::identity(c);
  bn.gamma = Tensor::uniform({c}, rng, 0.5, 1.5).set_requires_grad();
  bn.beta = Tensor::uniform({c}, rng, -0.5, 0.5).set_requires_grad();
  return bn;
}

}  // namespace

std::vector<GradCheckRow> layer_gradchecks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckRow> rows;
  auto leaf = [&](Shape s) { return Tensor::randn(std::move(s), rng).set_requires_grad(); };

  {
    Tensor x = leaf({2, 3, 8, 8});
    Conv2dParams p{leaf({4, 3, 3, 3}), leaf({4}), 2, 2};
    const Tensor w = Tensor::randn({2, 4, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(conv2d(x, p), w)); };
    check(rows, "conv2d/input", fn, x);
    check(rows, "conv2d/kernel", fn, p.kernel);
    check(rows, "conv2d/bias", fn, *p.bias);
  }
  {
    Tensor y0 = leaf({2, 3, 8, 8}), y1 = leaf({2, 2, 8, 8}), y2 = leaf({2, 2, 8, 8});
    MultiDilatedConvParams p;
    p.groups = {{leaf({2, 3, 3, 3}), 1}, {leaf({2, 2, 3, 3}), 2}, {leaf({2, 2, 3, 3}), 4}};
    const Tensor w = Tensor::randn({2, 2, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(multidilated_conv(std::vector<Tensor>{y0, y1, y2}, p), w)); };
    check(rows, "multidilated_conv/group0", fn, y0);
    check(rows, "multidilated_conv/group2", fn, y2);
    check(rows, "multidilated_conv/kernel1", fn, p.groups[1].kernel);
    check(rows, "multidilated_conv/kernel2", fn, p.groups[2].kernel);
  }
  {
    Tensor x = leaf({2, 4, 8, 8});
    BatchNormParams bn = random_norm(4, rng);
    const Tensor w = Tensor::randn({2, 4, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(composite_psi(x, bn), w)); };
    check(rows, "psi_train/input", fn, x);
    check(rows, "psi_train/gamma", fn, bn.gamma);
    check(rows, "psi_train/beta", fn, bn.beta);
    BatchNormParams ev = random_norm(4, rng);
    ev.mode = NormMode::eval;
    ev.running_var = Tensor::uniform({4}, rng, 0.5, 2.0);
    const Fn efn = [&] { return sum(mul(composite_psi(x, ev), w)); };
    check(rows, "psi_eval/input", efn, x);
    check(rows, "psi_eval/gamma", efn, ev.gamma);
  }
  {
    Tensor x = leaf({2, 3, 8, 8}), odd = leaf({2, 3, 7, 5});
    const Tensor w = Tensor::randn({2, 3, 4, 4}, rng), wo = Tensor::randn({2, 3, 4, 3}, rng);
    check(rows, "avg_pool_2x2/input", [&] { return sum(mul(avg_pool_2x2(x), w)); }, x);
    check(rows, "avg_pool_2x2/odd_input", [&] { return sum(mul(avg_pool_2x2(odd), wo)); }, odd);
  }
  {
    Tensor x = leaf({2, 3, 4, 4}), k = leaf({3, 2, 2, 2});
    const Tensor w = Tensor::randn({2, 2, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(transposed_conv_2x2(x, k), w)); };
    check(rows, "transposed_conv_2x2/input", fn, x);
    check(rows, "transposed_conv_2x2/kernel", fn, k);
  }
  {
    Tensor a = leaf({2, 3, 8, 5}), b = leaf({2, 3, 8, 3});
    const Tensor w = Tensor::randn({2, 3, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(concat({a, b}, axis::frequency), w)); };
    check(rows, "concat_frequency/input", fn, b);
    Tensor c = leaf({2, 2, 8, 8});
    const Tensor wc = Tensor::randn({2, 4, 4, 8}, rng);
    const Fn cfn = [&] { return sum(mul(slice(concat({c, c}, axis::channel), axis::time, 2, 6), wc)); };
    check(rows, "concat_channel_slice/input", cfn, c);
    const Tensor wp = Tensor::randn({2, 2, 8, 11}, rng);
    check(rows, "pad_zeros/input", [&] { return sum(mul(pad_zeros(c, axis::frequency, 11), wp)); }, c);
  }
  {
    Tensor x = leaf({2, 2, 8, 8});
    const Tensor target = Tensor::randn({2, 2, 8, 8}, rng);
    check(rows, "sigmoid_mse/input", [&] { return mse_loss(mul(sigmoid(x), x), target); }, x);
  }
  {
    D2BlockConfig cfg;
    cfg.growth_rate = 2;
    cfg.num_layers = 3;
    D2Block block(cfg, {2, 1}, rng);
    for (auto& layer : block.layers()) {
      for (auto& bn : layer.norms) {
        bn.gamma.values() = Tensor::uniform(bn.gamma.shape(), rng, 0.5, 1.5).values();
        bn.beta.values() = Tensor::uniform(bn.beta.shape(), rng, -0.5, 0.5).values();
      }
    }
    Tensor x0 = leaf({2, 2, 8, 8}), x1 = leaf({2, 1, 8, 8});
    const Tensor w = Tensor::randn({2, 6, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(flatten(block.forward({x0, x1}, NormMode::train)), w)); };
    check(rows, "d2_block/input", fn, x0);
    check(rows, "d2_block/kernel", fn, block.layers()[2].conv.groups[1].kernel);
    check(rows, "d2_block/gamma", fn, block.layers()[1].norms[2].gamma);
  }
  {
    D3BlockConfig cfg;
    cfg.d2.growth_rate = 2;
    cfg.d2.num_layers = 2;
    cfg.num_blocks = 2;
    D3Block block(cfg, {3}, rng);
    Tensor x = leaf({2, 3, 8, 8});
    const Tensor w = Tensor::randn({2, 4, 8, 8}, rng);
    const Fn fn = [&] { return sum(mul(flatten(block.forward({x}, NormMode::train)), w)); };
    check(rows, "d3_block/input", fn, x);
    check(rows, "d3_block/kernel", fn, block.blocks()[1].layers()[1].conv.groups[0].kernel);
  }
  return rows;
}

std::vector<GradCheckRow> network_gradchecks(NetworkConfig cfg, std::uint64_t seed, const NetworkCheckOptions& options) {
  const bool all_full = std::all_of(cfg.bands.begin(), cfg.bands.end(), [](const BandConfig& b) { return b.full; });
  if (all_full) {
    cfg.max_bin = options.bins;
    for (BandConfig& b : cfg.bands) b.end = options.bins;
  }
  cfg.validate();
  Model model(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  Tensor x = Tensor::uniform({options.batch, cfg.in_channels, options.frames, options.bins}, rng, 0.1, 1.0);
  x.set_requires_grad();
  const Tensor target = Tensor::uniform(x.shape(), rng, 0.0, 1.0);
  const Fn fn = [&] { return mse_loss(model.forward(x, NormMode::train), target); };
  std::vector<GradCheckRow> rows;
  FiniteDiffOptions opt;
  opt.max_coordinates = options.max_coordinates;
  rows.push_back({"network/input", finite_diff_check(fn, x, opt)});
  for (const NamedTensor& p : model.parameters()) rows.push_back({"network/" + p.name, finite_diff_check(fn, p.tensor, opt)});
  return rows;
}

}  // namespace d3net

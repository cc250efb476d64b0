#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "d3net/gradcheck.hpp"
#include "d3net/layers.hpp"
#include "d3net/ops.hpp"

using namespace d3net;

TEST_CASE("elementwise examples") {
  const Tensor a = Tensor::from({2}, {1, 2});
  const Tensor b = Tensor::from({2}, {3, 4});
  const Tensor s = elementwise(ElementwiseOp::add, a, b);
  CHECK(s[0] == 4);
  CHECK(s[1] == 6);

  const Tensor r = relu(Tensor::from({2}, {-1, 2}));
  CHECK(r[0] == 0);
  CHECK(r[1] == 2);
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a(Shape{2, 3});
  const Tensor b(Shape{3, 2});
  try {
    add(a, b);
    FAIL("expected failure");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("mul by zero annihilates value and gradient") {
  Tensor x = Tensor::from({3}, {1.5, -2, 7});
  x.set_requires_grad();
  ComputeTape tape;
  TapeScope scope(tape);
  const Tensor y = sum(mul(x, 0.0));
  CHECK(y.item() == 0.0);
  tape.backward(y);
  CHECK(x.grad().isZero(0.0));
}

TEST_CASE("relu gradient mask") {
  Tensor x = Tensor::from({2}, {-1, 2});
  x.set_requires_grad();
  ComputeTape tape;
  TapeScope scope(tape);
  tape.backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("backward of simple losses") {
  Tensor x = Tensor::from({2}, {1, -2});
  x.set_requires_grad();
  {
    ComputeTape tape;
    TapeScope scope(tape);
    tape.backward(sum(x * x));
  }
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(-4));

  x.zero_grad();
  {
    ComputeTape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad();
  ComputeTape tape;
  TapeScope scope(tape);
  const Tensor y = x * x;
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("unreachable leaves have zero gradient") {
  Tensor x = Tensor::from({2}, {1, 2});
  Tensor unused = Tensor::from({3}, {1, 2, 3});
  x.set_requires_grad();
  unused.set_requires_grad();
  ComputeTape tape;
  TapeScope scope(tape);
  tape.backward(sum(x));
  CHECK(unused.grad().size() == 3);
  CHECK(unused.grad().isZero(0.0));
}

TEST_CASE("tape records in execution order and replays each once") {
  Tensor x = Tensor::from({2}, {0.5, 1.5});
  x.set_requires_grad();
  ComputeTape tape;
  TapeScope scope(tape);
  const Tensor a = x * x;
  const Tensor b = a + x;
  const Tensor loss = sum(b);
  REQUIRE(tape.size() == 3);
  CHECK(tape.records()[0].output.same_storage(a));
  CHECK(tape.records()[1].output.same_storage(b));
  CHECK(tape.records()[2].output.same_storage(loss));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("no recording without a tape or without grad inputs") {
  Tensor x = Tensor::from({2}, {1, 2});
  const Tensor y = x * x;
  CHECK_FALSE(y.requires_grad());
  ComputeTape tape;
  TapeScope scope(tape);
  const Tensor z = x * x;
  CHECK(tape.size() == 0);
}

TEST_CASE("finite_diff_check basics") {
  std::mt19937_64 rng(0);
  Tensor x = Tensor::randn({12}, rng);
  const double err = finite_diff_check([&] { return sum(x * x); }, x, 1e-5);
  CHECK(err < 1e-8);

  Tensor c = Tensor::randn({4}, rng);
  const double zero = finite_diff_check([&] { return Tensor::scalar(3.0); }, c, 1e-5);
  CHECK(zero == 0.0);

  CHECK_THROWS(finite_diff_check([&] { return Tensor::scalar(std::nan("")); }, c, 1e-5));
  CHECK_THROWS(finite_diff_check([&] { return sum(c); }, c, 0.0));
}

TEST_CASE("backward is linear in the loss") {
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = Tensor::randn({2, 3, 5, 6}, rng);
    Conv2dParams p;
    p.kernel = Tensor::randn({4, 3, 3, 3}, rng);
    p.dilation_t = p.dilation_f = 2;
    const Tensor w = Tensor::randn({2, 4, 5, 6}, rng);
    x.set_requires_grad();

    auto grad_of = [&](double a, double b) {
      x.zero_grad();
      ComputeTape tape;
      TapeScope scope(tape);
      const Tensor y = conv2d(x, p);
      const Tensor l1 = sum(relu(y) * w);
      const Tensor l2 = sum(y * y);
      tape.backward(add(mul(l1, a), mul(l2, b)));
      return Array(x.grad());
    };
    const double a = 0.7, b = -1.3;
    const Array combined = grad_of(a, b);
    const Array g1 = grad_of(1.0, 0.0);
    const Array g2 = grad_of(0.0, 1.0);
    CHECK(((combined - (a * g1 + b * g2)).abs().maxCoeff()) <= 1e-10);
  }
}

TEST_CASE("determinism across two runs") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
    Conv2dParams p;
    p.kernel = init_kernel({5, 3, 3, 3}, 27, rng);
    x.set_requires_grad();
    ComputeTape tape;
    TapeScope scope(tape);
    BatchNormParams bn = BatchNormParams::identity(5);
    const Tensor y = composite_psi(conv2d(x, p), bn);
    tape.backward(sum(y * y));
    return std::make_pair(Array(y.values()), Array(x.grad()));
  };
  const auto a = run();
  const auto b = run();
  CHECK((a.first == b.first).all());
  CHECK((a.second == b.second).all());
}

TEST_CASE("gradient check through a conv chain") {
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = Tensor::randn({2, 2, 6, 7}, rng);
    Conv2dParams c1, c2;
    c1.kernel = Tensor::randn({3, 2, 3, 3}, rng);
    c1.bias = Tensor::randn({3}, rng);
    c2.kernel = Tensor::randn({2, 3, 3, 3}, rng);
    c2.dilation_t = 2;
    c2.dilation_f = 3;
    auto fn = [&] { return sum(sigmoid(conv2d(relu(conv2d(x, c1)), c2))); };
    CHECK(finite_diff_check(fn, x, 1e-5) < 1e-6);
    CHECK(finite_diff_check(fn, c1.kernel, 1e-5) < 1e-6);
    CHECK(finite_diff_check(fn, *c1.bias, 1e-5) < 1e-6);
    CHECK(finite_diff_check(fn, c2.kernel, 1e-5) < 1e-6);
  }
}

TEST_CASE("structural ops") {
  std::mt19937_64 rng(3);
  const Tensor a = Tensor::randn({2, 3, 4, 5}, rng);
  const Tensor b = Tensor::randn({2, 5, 4, 5}, rng);
  const Tensor c = concat({a, b}, axis::channel);
  CHECK(c.shape() == Shape{2, 8, 4, 5});
  const Tensor back = slice(c, axis::channel, 3, 8);
  CHECK((back.values() == b.values()).all());
  CHECK(concat({a}, axis::channel).same_storage(a));

  const Tensor lo = Tensor::randn({1, 2, 3, 256}, rng);
  const Tensor hi = Tensor::randn({1, 2, 3, 1344}, rng);
  CHECK(concat({lo, hi}, axis::frequency).shape() == Shape{1, 2, 3, 1600});
  CHECK_THROWS_AS(concat({a, Tensor::randn({2, 3, 4, 6}, rng)}, axis::channel), std::invalid_argument);

  const Tensor padded = pad_zeros(a, axis::frequency, 9);
  CHECK(padded.shape() == Shape{2, 3, 4, 9});
  CHECK((slice(padded, axis::frequency, 0, 5).values() == a.values()).all());
  CHECK(slice(padded, axis::frequency, 5, 9).values().isZero(0.0));

  Tensor x = Tensor::randn({2, 3, 4, 5}, rng);
  Tensor y = Tensor::randn({2, 2, 4, 5}, rng);
  const Tensor w = Tensor::randn({2, 5, 4, 7}, rng);
  auto fn = [&] {
    const Tensor cat = concat({x, y}, axis::channel);
    return sum(pad_zeros(slice(cat, axis::frequency, 1, 4), axis::frequency, 7) * w);
  };
  CHECK(finite_diff_check(fn, x, 1e-5) < 1e-6);
  CHECK(finite_diff_check(fn, y, 1e-5) < 1e-6);
}

TEST_CASE("mse loss") {
  const Tensor t = Tensor::from({3}, {1, 2, 3});
  CHECK(mse_loss(t, t).item() == 0.0);
  CHECK(mse_loss(add(t, 1.0), t).item() == doctest::Approx(1.0));
  std::mt19937_64 rng(0);
  Tensor e = Tensor::randn({2, 2, 3, 4}, rng);
  const Tensor target = Tensor::randn({2, 2, 3, 4}, rng);
  CHECK(finite_diff_check([&] { return mse_loss(e, target); }, e, 1e-5) < 1e-8);
  CHECK_THROWS_AS(mse_loss(e, t), std::invalid_argument);
}

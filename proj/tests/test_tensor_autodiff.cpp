#include "support/gradcheck.hpp"

#include "metapix/autodiff.hpp"

#include <doctest.h>

#include <random>

using namespace metapix;
using metapix::testing::op_cases;
using metapix::testing::random_tensor;

TEST_CASE("tensor construction validates element counts") {
  TensorF t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.data().isZero());
  CHECK_THROWS_AS(TensorF({2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);
  CHECK(TensorF::scalar(4.0f).item() == 4.0f);
  CHECK_THROWS(TensorF({2}, {1.0f, 2.0f}).item());
  const TensorF r = TensorF({2, 3}, {1, 2, 3, 4, 5, 6}).reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r[5] == 6.0f);
}

TEST_CASE("backward rejects a non-scalar loss") {
  TensorD x({3}, {1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Var<double> v = tape.leaf(x);
  CHECK_THROWS_AS(tape.backward(v * v), std::invalid_argument);
}

TEST_CASE("gradients of a small expression match hand derivation") {
  // f(x, y) = sum(x * y + x) -> df/dx = y + 1, df/dy = x
  TensorD x({3}, {1.0, -2.0, 0.5});
  TensorD y({3}, {4.0, 0.25, -1.0});
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tape<double> tape;
  Var<double> vx = tape.leaf(x), vy = tape.leaf(y);
  tape.backward(sum(vx * vy + vx));
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[1] == doctest::Approx(1.25));
  CHECK(x.grad()[2] == doctest::Approx(0.0));
  CHECK(y.grad()[0] == doctest::Approx(1.0));
  CHECK(y.grad()[1] == doctest::Approx(-2.0));
  CHECK(y.grad()[2] == doctest::Approx(0.5));
}

TEST_CASE("repeated backward calls accumulate parameter gradients") {
  TensorD x({2}, {1.5, -3.0});
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    Var<double> v = tape.leaf(x);
    tape.backward(sum(v * v));
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-12.0));
}

TEST_CASE("detach and reference stop gradients") {
  TensorD x({2}, {2.0, 3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Var<double> v = tape.leaf(x);
  Var<double> frozen = tape.reference(x);
  tape.backward(sum(v * detach(v) + frozen));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(3.0));
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  Tape<double> tape;
  Var<double> a = tape.constant(TensorD({2, 3}));
  Var<double> b = tape.constant(TensorD({3, 2}));
  try {
    (void)(a + b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("conv2d forward matches a direct loop") {
  std::mt19937_64 rng(3);
  const TensorD x = random_tensor({2, 3, 5, 5}, rng);
  const TensorD k = random_tensor({4, 3, 3, 3}, rng);
  Tape<double> tape;
  for (Index stride : {1, 2}) {
    const TensorD y = conv2d(tape.constant(x), tape.constant(k), stride, 1).value();
    const Index ho = (5 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, ho, ho});
    double worst = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index o = 0; o < 4; ++o)
        for (Index oy = 0; oy < ho; ++oy)
          for (Index ox = 0; ox < ho; ++ox) {
            double acc = 0;
            for (Index c = 0; c < 3; ++c)
              for (Index ky = 0; ky < 3; ++ky)
                for (Index kx = 0; kx < 3; ++kx) {
                  const Index iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                  if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                  acc += x[((n * 3 + c) * 5 + iy) * 5 + ix] * k[((o * 3 + c) * 3 + ky) * 3 + kx];
                }
            worst = std::max(worst, std::abs(acc - y[((n * 4 + o) * ho + oy) * ho + ox]));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv2d rejects even kernels and fractional output sizes") {
  Tape<double> tape;
  Var<double> x = tape.constant(TensorD({1, 1, 6, 6}));
  CHECK_THROWS_AS(conv2d(x, tape.constant(TensorD({1, 1, 2, 2}))), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, tape.constant(TensorD({1, 1, 3, 3})), 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, tape.constant(TensorD({1, 2, 3, 3}))), std::invalid_argument);
}

TEST_CASE("pooling and upsampling are adjoint-shaped inverses on constants") {
  Tape<double> tape;
  const TensorD x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const TensorD up = upsample2x(tape.constant(x)).value();
  CHECK(up.shape() == Shape{1, 1, 4, 4});
  CHECK(up[0] == 1.0);
  CHECK(up[1] == 1.0);
  CHECK(up[15] == 4.0);
  const TensorD down = avg_pool2x(tape.constant(up)).value();
  CHECK(down.same_values(x));
}

TEST_CASE("every differentiable op passes finite differences") {
  std::mt19937_64 rng(2024);
  for (const auto& op : op_cases()) {
    double worst = 0;
    for (int c = 0; c < 3; ++c) worst = std::max(worst, op.run(rng));
    INFO(op.name << " max relative error " << worst);
    CHECK(worst < 1e-3);
  }
}

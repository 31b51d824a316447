#include <doctest.h>

#include <cmath>
#include <string>

#include "gradcheck_scenarios.hpp"
#include "simpgan/gradcheck.hpp"
#include "simpgan/rng.hpp"
#include "simpgan/tensor.hpp"

using namespace simpgan;
using simpgan::testing::op_scenarios;
using simpgan::testing::random_tensor;

using Tf = Tensor<float>;
using Td = Tensor<double>;

TEST_CASE("forward: closed-form op values") {
  Graph<double> g;
  CHECK(g.sigmoid(Td::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-12));

  auto sq = g.square(Td::from({3}, {1, -2, 3}));
  CHECK(sq.value() == std::vector<double>{1, 4, 9});

  // 1x1x3x3 input against a 1x1x1x1 identity kernel reproduces the input.
  auto x = Td::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto k = Td::from({1, 1, 1, 1}, {1});
  auto y = g.conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value() == x.value());
}

TEST_CASE("forward: shape errors carry op name and shapes") {
  Graph<float> g;
  CHECK_THROWS_WITH_AS(g.add(Tf::zeros({2, 3}), Tf::zeros({3, 2})),
                       doctest::Contains("add"), ShapeError);
  try {
    g.matmul(Tf::zeros({2, 3}), Tf::zeros({2, 3}));
    FAIL("expected throw");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  try {
    g.conv2d(Tf::zeros({1, 3, 4, 4}), Tf::zeros({2, 4, 3, 3}), 1, 1);
    FAIL("expected throw");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("conv2d") != std::string::npos);
    CHECK(msg.find("[1,3,4,4]") != std::string::npos);
    CHECK(msg.find("[2,4,3,3]") != std::string::npos);
  }
}

TEST_CASE("forward: log rejects non-positive values") {
  Graph<float> g;
  CHECK_THROWS_AS(g.log(Tf::from({2}, {1.0f, 0.0f})), NumericError);
  CHECK_THROWS_AS(g.log(Tf::from({1}, {-2.0f})), NumericError);
}

TEST_CASE("backward: closed-form gradients") {
  SUBCASE("sum of squares") {
    Graph<double> g;
    auto x = Td::from({2}, {1, 2}).set_requires_grad(true);
    auto loss = g.sum(g.square(x));
    auto grads = g.backward(loss);
    CHECK(grads.at(x.id()).value()[0] == doctest::Approx(2.0));
    CHECK(grads.at(x.id()).value()[1] == doctest::Approx(4.0));
  }
  SUBCASE("sigmoid at zero") {
    Graph<double> g;
    auto x = Td::scalar(0.0).set_requires_grad(true);
    auto grads = g.backward(g.sigmoid(x));
    CHECK(grads.at(x.id()).value()[0] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("loss must be scalar") {
    Graph<double> g;
    auto x = Td::from({2}, {1, 2}).set_requires_grad(true);
    auto y = g.square(x);
    CHECK_THROWS_AS(g.backward(y), ShapeError);
  }
  SUBCASE("non-participating watched leaf gets zeros") {
    Graph<double> g;
    auto x = Td::scalar(1.5).set_requires_grad(true);
    auto unused = Td::from({3}, {1, 2, 3}).set_requires_grad(true);
    g.watch(unused);
    auto grads = g.backward(g.square(x));
    CHECK(grads.at(unused.id()).value() == std::vector<double>{0, 0, 0});
    CHECK(grads.at(x.id()).value()[0] == doctest::Approx(3.0));
  }
  SUBCASE("relu gradient at exactly zero is zero") {
    Graph<double> g;
    auto x = Td::from({3}, {-1.0, 0.0, 2.0}).set_requires_grad(true);
    auto grads = g.backward(g.sum(g.relu(x)));
    CHECK(grads.at(x.id()).value() == std::vector<double>{0, 0, 1});
  }
}

TEST_CASE("backward: conv2d gradient matches central differences") {
  Rng rng(20240811);
  auto x = random_tensor<double>(rng, {1, 1, 4, 4});
  auto w = random_tensor<double>(rng, {1, 1, 3, 3});
  auto report = grad_check<double>(
      [](Graph<double>& g, const std::vector<Td>& p) { return g.mean(g.conv2d(p[0], p[1], 1, 1)); },
      {x, w}, 1e-3);
  CHECK(report.finite);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: wide-precision closed-form cases") {
  SUBCASE("sum of squares") {
    auto report = grad_check<double>(
        [](Graph<double>& g, const std::vector<Td>& p) { return g.sum(g.square(p[0])); },
        {Td::from({3}, {1, 2, 3})}, 1e-4);
    CHECK(report.max_rel_err < 1e-6);
  }
  SUBCASE("relu away from the kink") {
    auto report = grad_check<double>(
        [](Graph<double>& g, const std::vector<Td>& p) { return g.sum(g.relu(p[0])); },
        {Td::from({4}, {0.2, 1.1, 0.5, 2.0})}, 1e-4);
    CHECK(report.max_rel_err < 1e-6);
  }
  SUBCASE("epsilon must be positive") {
    CHECK_THROWS_AS(grad_check<double>(
                        [](Graph<double>& g, const std::vector<Td>& p) { return g.sum(p[0]); },
                        {Td::scalar(1.0)}, 0.0),
                    NumericError);
  }
}

TEST_CASE("invariant: every op passes grad_check at 10 random points") {
  for (const auto& r : simpgan::testing::run_op_gradcheck_suite(10)) {
    CAPTURE(r.name);
    CHECK(r.finite);
    CHECK(r.float_err < 1e-3);
    CHECK(r.double_err < 1e-5);
  }
}

TEST_CASE("invariant: softmax outputs are a probability vector") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<float> g;
    auto x = random_tensor<float>(rng, {4, 5}, -4, 4);
    auto sm = g.softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      float total = 0;
      for (int c = 0; c < 5; ++c) {
        const float v = sm.value()[r * 5 + c];
        CHECK(v >= 0.0f);
        total += v;
      }
      CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
    }
  }
}

TEST_CASE("invariant: backward is linear in the loss") {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    auto x_vals = random_tensor<double>(rng, {2, 3}).value();
    auto make = [&x_vals]() { return Td::from({2, 3}, x_vals).set_requires_grad(true); };

    auto run = [](auto loss_fn) {
      auto x = loss_fn.first();
      Graph<double> g;
      auto loss = loss_fn.second(g, x);
      return g.backward(loss).at(x.id()).value();
    };
    struct Case {
      std::function<Td()> first;
      std::function<Td(Graph<double>&, Td&)> second;
    };
    auto ga = run(Case{make, [](Graph<double>& g, Td& x) { return g.sum(g.square(x)); }});
    auto gb = run(Case{make, [](Graph<double>& g, Td& x) { return g.mean(g.tanh(x)); }});
    auto gsum = run(Case{make, [](Graph<double>& g, Td& x) {
      return g.add(g.sum(g.square(x)), g.mean(g.tanh(x)));
    }});
    for (std::size_t i = 0; i < gsum.size(); ++i) {
      const double expect = ga[i] + gb[i];
      CHECK(gsum[i] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("weight sharing: a leaf used twice accumulates both contributions") {
  Graph<double> g;
  auto x = Td::scalar(3.0).set_requires_grad(true);
  // f(x) = x*x + x  => f'(x) = 2x + 1 = 7
  auto loss = g.add(g.mul(x, x), x);
  CHECK(g.backward(loss).at(x.id()).value()[0] == doctest::Approx(7.0));
}

TEST_CASE("frozen views share values but block gradients") {
  Graph<double> g;
  auto x = Td::scalar(2.0).set_requires_grad(true);
  auto fx = x.frozen();
  CHECK_FALSE(fx.requires_grad());
  auto y = g.mul(fx, fx);
  CHECK_FALSE(y.requires_grad());
  x.value()[0] = 5.0;
  CHECK(fx.value()[0] == 5.0);
}

TEST_CASE("graphs with gradients disabled record nothing") {
  Graph<float> g(false);
  auto x = Tf::from({2}, {1, 2}).set_requires_grad(true);
  auto y = g.sum(g.square(x));
  CHECK(y.item() == doctest::Approx(5.0f));
  CHECK(g.node_count() == 0);
}

TEST_CASE("generic dispatcher matches typed builders") {
  Graph<double> g;
  auto x = Td::from({2, 2}, {0.3, -0.4, 1.0, 2.0});
  OpAttrs attrs;
  attrs.slope = 0.2;
  auto a = g.forward(Op::leaky_relu, {x}, attrs);
  auto b = g.leaky_relu(x, 0.2);
  CHECK(a.value() == b.value());
  CHECK_THROWS_AS(g.forward(Op::add, {x}), ShapeError);
}
